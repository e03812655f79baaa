"""Checkpoint files: an 8-byte length prefix, a JSON header, raw little-endian float64 data.

Header layout::

    {"format": "smgan-ckpt-1", "config_hash": ..., "step": ..., "config": {...},
     "tensors": [{"name": ..., "shape": [...], "offset": ..., "nbytes": ...}, ...]}

Offsets are relative to the first byte after the header.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

FORMAT = "smgan-ckpt-1"
_DTYPE = np.dtype("<f8")


class CheckpointFormatError(ValueError):
    """Unknown format version or a config hash that does not match."""


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    step: int = 0
    config: dict[str, Any] = field(default_factory=dict)
    config_hash: str = ""

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under ``prefix/`` with the prefix stripped, in file order."""
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "format": FORMAT,
        "config_hash": ckpt.config_hash,
        "step": int(ckpt.step),
        "config": ckpt.config,
        "tensors": entries,
    }
    raw = json.dumps(header, sort_keys=True, default=list).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def read_header(path: str | Path) -> tuple[dict[str, Any], int]:
    with open(path, "rb") as fh:
        prefix = fh.read(8)
        if len(prefix) != 8:
            raise CheckpointFormatError(f"{path}: truncated checkpoint")
        (n,) = struct.unpack("<Q", prefix)
        try:
            header = json.loads(fh.read(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"{path}: unreadable checkpoint header") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        found = header.get("format") if isinstance(header, dict) else None
        raise CheckpointFormatError(f"{path}: format {found!r}, expected {FORMAT!r}")
    return header, 8 + n


def load_checkpoint(path: str | Path, expected_hash: str | None = None) -> Checkpoint:
    header, start = read_header(path)
    if expected_hash is not None and header.get("config_hash") != expected_hash:
        raise CheckpointFormatError(
            f"{path}: config hash {header.get('config_hash')!r} does not match {expected_hash!r}"
        )
    payload = Path(path).read_bytes()[start:]
    tensors = {}
    for e in header["tensors"]:
        chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointFormatError(f"{path}: tensor {e['name']} truncated")
        tensors[e["name"]] = np.frombuffer(chunk, dtype=_DTYPE).reshape(e["shape"]).astype(np.float64)
    return Checkpoint(tensors, header.get("step", 0), header.get("config", {}), header.get("config_hash", ""))

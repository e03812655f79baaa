"""Volumes in HU, the raw-volume file format, HU normalisation and dataset manifests.

A volume on disk is a pair ``<stem>.raw`` (little-endian float32, z-major)
and ``<stem>.json``::

    {"shape": [D, H, W], "spacing_mm": [dz, dy, dx], "id": "...", "format": "smgan-vol-1"}
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VOLUME_FORMAT = "smgan-vol-1"
HU_MIN, HU_MAX = -1024.0, 3071.0


class VolumeFormatError(ValueError):
    pass


@dataclass
class Volume:
    voxels: np.ndarray  # [D, H, W] in HU
    spacing: tuple[float, float, float] = (1.0, 0.8, 0.8)
    id: str = ""

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float64)
        if self.voxels.ndim != 3:
            raise ValueError(f"volume must be [D, H, W], got shape {self.voxels.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape


def _paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".raw", ".json") else p
    return stem.with_suffix(".raw"), stem.with_suffix(".json")


def write_volume(path: str | Path, vol: Volume) -> Path:
    """Write ``vol`` next to ``path`` (suffix ignored); returns the sidecar path."""
    raw, side = _paths(path)
    raw.parent.mkdir(parents=True, exist_ok=True)
    raw.write_bytes(np.ascontiguousarray(vol.voxels, dtype="<f4").tobytes())
    meta = {
        "shape": list(vol.shape),
        "spacing_mm": list(vol.spacing),
        "id": vol.id,
        "format": VOLUME_FORMAT,
    }
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


def validate_sidecar(meta) -> None:
    if not isinstance(meta, dict):
        raise VolumeFormatError("sidecar must be a JSON object")
    if meta.get("format") != VOLUME_FORMAT:
        raise VolumeFormatError(f"format {meta.get('format')!r}, expected {VOLUME_FORMAT!r}")
    shape = meta.get("shape")
    if not (isinstance(shape, list) and len(shape) == 3 and all(isinstance(n, int) and n > 0 for n in shape)):
        raise VolumeFormatError(f"bad shape {shape!r}")
    spacing = meta.get("spacing_mm")
    if not (isinstance(spacing, list) and len(spacing) == 3 and all(float(s) > 0 for s in spacing)):
        raise VolumeFormatError(f"bad spacing {spacing!r}")
    if not isinstance(meta.get("id"), str):
        raise VolumeFormatError("id must be a string")


def read_volume(path: str | Path) -> Volume:
    raw, side = _paths(path)
    meta = json.loads(side.read_text())
    validate_sidecar(meta)
    data = np.frombuffer(raw.read_bytes(), dtype="<f4")
    shape = tuple(meta["shape"])
    if data.size != int(np.prod(shape)):
        raise VolumeFormatError(f"{raw}: {data.size} voxels, sidecar says {shape}")
    return Volume(data.reshape(shape).astype(np.float64), tuple(meta["spacing_mm"]), meta["id"])


def normalize_hu(v, lo: float = HU_MIN, hi: float = HU_MAX) -> np.ndarray:
    """Clamp HU to [lo, hi] and map affinely onto [0, 1]."""
    if lo >= hi:
        raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
    arr = v.voxels if isinstance(v, Volume) else np.asarray(v, dtype=np.float64)
    return (np.clip(arr, lo, hi) - lo) / (hi - lo)


def denormalize_hu(x, lo: float = HU_MIN, hi: float = HU_MAX) -> np.ndarray:
    if lo >= hi:
        raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
    return np.asarray(x, dtype=np.float64) * (hi - lo) + lo


# -- manifests ---------------------------------------------------------------------


def write_manifest(path: str | Path, entries: list[dict]) -> None:
    Path(path).write_text(json.dumps(entries, indent=2) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    """Entries ``{ldct_path, ndct_path, id}`` with paths resolved against the manifest's directory."""
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise VolumeFormatError(f"{path}: manifest must be a JSON list")
    out = []
    for e in entries:
        missing = {"ldct_path", "ndct_path", "id"} - set(e)
        if missing:
            raise VolumeFormatError(f"{path}: manifest entry lacks {sorted(missing)}")
        out.append(
            {
                "id": e["id"],
                "ldct_path": str((path.parent / e["ldct_path"]).resolve()),
                "ndct_path": str((path.parent / e["ndct_path"]).resolve()),
            }
        )
    return out


def load_pairs(manifest: str | Path) -> list[tuple[Volume, Volume]]:
    """(ldct, ndct) volume pairs listed in a manifest."""
    pairs = []
    for e in read_manifest(manifest):
        ld, nd = read_volume(e["ldct_path"]), read_volume(e["ndct_path"])
        if ld.shape != nd.shape:
            raise VolumeFormatError(f"{e['id']}: LDCT {ld.shape} and NDCT {nd.shape} differ")
        pairs.append((ld, nd))
    return pairs

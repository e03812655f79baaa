"""Overlapping patch extraction and volume-level k-fold splits."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .volume import HU_MAX, HU_MIN, Volume, normalize_hu


@dataclass
class PatchPair:
    ldct: np.ndarray  # [pd, ph, pw] in [0, 1]
    ndct: np.ndarray
    origin: tuple[int, int, int]


def window_origins(shape, size, stride) -> np.ndarray:
    """All (z, y, x) origins of windows that fit inside ``shape`` at ``stride``; [N, 3]."""
    if any(s > n for s, n in zip(size, shape)):
        raise ValueError(f"patch {tuple(size)} exceeds volume {tuple(shape)}")
    if any(st < 1 for st in stride):
        raise ValueError(f"stride must be positive, got {tuple(stride)}")
    axes = [np.arange(0, n - s + 1, st) for n, s, st in zip(shape, size, stride)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in grid], axis=1)


def extract_patches(
    ldct: Volume,
    ndct: Volume,
    size=(11, 80, 80),
    stride=(1, 1, 1),
    budget: int = 0,
    rng: np.random.Generator | None = None,
    hu_range: tuple[float, float] = (HU_MIN, HU_MAX),
) -> list[PatchPair]:
    """Aligned normalised patch pairs at every window origin, subsampled to ``budget``.

    ``budget`` <= 0 keeps every origin. Subsampling is uniform without
    replacement and origins are returned in raster order.
    """
    if ldct.shape != ndct.shape:
        raise ValueError(f"LDCT {ldct.shape} and NDCT {ndct.shape} are not aligned")
    origins = window_origins(ldct.shape, size, stride)
    if 0 < budget < len(origins):
        rng = rng if rng is not None else np.random.default_rng(0)
        keep = np.sort(rng.choice(len(origins), size=budget, replace=False))
        origins = origins[keep]
    lo, hi = hu_range
    ld, nd = normalize_hu(ldct, lo, hi), normalize_hu(ndct, lo, hi)
    pd, ph, pw = size
    out = []
    for z, y, x in origins:
        sl = (slice(z, z + pd), slice(y, y + ph), slice(x, x + pw))
        out.append(PatchPair(ld[sl].copy(), nd[sl].copy(), (int(z), int(y), int(x))))
    return out


def stack_pairs(pairs: Sequence[PatchPair]) -> tuple[np.ndarray, np.ndarray]:
    """(ldct, ndct) arrays of shape [N, 1, pd, ph, pw]."""
    ld = np.stack([p.ldct for p in pairs])[:, None]
    nd = np.stack([p.ndct for p in pairs])[:, None]
    return ld, nd


@dataclass
class FoldPlan:
    k: int
    assignment: dict[str, int]
    seed: int

    def fold(self, i: int) -> list[str]:
        return [vid for vid, f in self.assignment.items() if f == i]

    def split(self, i: int) -> tuple[list[str], list[str]]:
        """(training ids, validation ids) with fold ``i`` held out."""
        return [v for v, f in self.assignment.items() if f != i], self.fold(i)


def make_folds(ids: Sequence[str], k: int, seed: int = 0) -> FoldPlan:
    """Shuffle volume ids with ``seed`` and deal them round-robin into ``k`` folds."""
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("volume ids must be unique")
    if k < 1 or k > len(ids):
        raise ValueError(f"cannot split {len(ids)} volumes into {k} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    assignment = {ids[j]: i % k for i, j in enumerate(order)}
    return FoldPlan(k, assignment, seed)

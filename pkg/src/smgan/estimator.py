"""scikit-learn style wrapper: fit on (LDCT, NDCT) volume stacks, transform LDCT volumes."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import TrainConfig, desk_config
from .data.volume import Volume, normalize_hu
from .metrics import psnr
from .trainer import denoise_volume, prepare_patches, train


def check_volumes(X, name: str = "X") -> np.ndarray:
    """Validate HU volumes: one [D, H, W] array or a stack [N, D, H, W]; returns float64 [N, D, H, W]."""
    arr = check_array(X, allow_nd=True, dtype=np.float64, ensure_min_samples=1, input_name=name)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"{name} must be [D, H, W] or [N, D, H, W], got {arr.ndim} dimensions")
    return arr


def _set_nested(d: dict, key: str, value) -> None:
    parts = key.split(".")
    for p in parts[:-1]:
        if p not in d or not isinstance(d[p], dict):
            raise ValueError(f"unknown config section in {key!r}")
        d = d[p]
    if parts[-1] not in d:
        raise ValueError(f"unknown config key {key!r}")
    d[parts[-1]] = value


class SMGANDenoiser(TransformerMixin, BaseEstimator):
    """Train a generator on paired volumes and denoise new ones.

    ``config_overrides`` takes dotted keys (``"loss.tau"``) applied after the
    preset and the explicit arguments.
    """

    def __init__(
        self,
        variant="smgan3d",
        preset="desk",
        epochs=20,
        batch_size=8,
        lr=5e-4,
        n_critic=2,
        patch_shape=(11, 40, 40),
        patch_budget=64,
        seed=0,
        config_overrides=None,
    ):
        self.variant = variant
        self.preset = preset
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.n_critic = n_critic
        self.patch_shape = patch_shape
        self.patch_budget = patch_budget
        self.seed = seed
        self.config_overrides = config_overrides

    def _make_config(self) -> TrainConfig:
        if self.preset not in ("desk", "full"):
            raise ValueError(f"preset must be 'desk' or 'full', got {self.preset!r}")
        base = desk_config() if self.preset == "desk" else TrainConfig()
        d = base.to_dict()
        d.update(
            variant=self.variant,
            epochs=int(self.epochs),
            batch_size=int(self.batch_size),
            lr=float(self.lr),
            n_critic=int(self.n_critic),
            patch_shape=tuple(self.patch_shape),
            patch_budget=int(self.patch_budget),
            seed=int(self.seed),
            val_fraction=0.0,
        )
        for key, value in (self.config_overrides or {}).items():
            _set_nested(d, key, value)
        return TrainConfig.from_dict(d)

    def fit(self, X, y):
        """X: LDCT volumes in HU, y: aligned NDCT volumes."""
        X = check_volumes(X, "X")
        y = check_volumes(y, "y")
        if X.shape != y.shape:
            raise ValueError(f"X {X.shape} and y {y.shape} must have the same shape")
        config = self._make_config()
        pairs = [(Volume(a, id=f"vol{i}"), Volume(b, id=f"vol{i}")) for i, (a, b) in enumerate(zip(X, y))]
        data = prepare_patches(pairs, config)
        result = train(config, data.train_ldct, data.train_ndct)
        self.config_ = config
        self.generator_ = result.generator
        self.history_ = result.epochs
        self.n_patches_ = len(data.train_ldct)
        self.volume_shape_ = X.shape[1:]
        return self

    def transform(self, X):
        """Denoised volumes in HU, same shape as X."""
        check_is_fitted(self, "generator_")
        single = np.ndim(X) == 3
        X = check_volumes(X, "X")
        cfg = self.config_
        out = np.stack(
            [denoise_volume(self.generator_, Volume(v), cfg.patch_shape, (cfg.hu_lo, cfg.hu_hi)).voxels for v in X]
        )
        return out[0] if single else out

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y):
        """Mean PSNR (dB, peak 1 on the normalised scale) of the denoised X against y."""
        y = check_volumes(y, "y")
        z = self.transform(check_volumes(X, "X"))
        lo, hi = self.config_.hu_lo, self.config_.hu_hi
        return float(np.mean([psnr(normalize_hu(a, lo, hi), normalize_hu(b, lo, hi)) for a, b in zip(z, y)]))

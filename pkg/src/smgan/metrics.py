"""Image-quality metrics, ROI statistics, display windowing and report emission."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Value, no_grad
from .config import LossConfig
from .losses import _as_images, _ssim_per_image

REPORT_FIELDS = (
    "id",
    "method",
    "psnr_db",
    "ssim",
    "rmse",
    "roi_label",
    "roi_mean_hu",
    "roi_sd_hu",
    "pct_diff_mean",
    "pct_diff_sd",
)
DISPLAY_WINDOW = (-160.0, 240.0)


def _pair(z, x) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z.shape != x.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {x.shape}")
    return z, x


def rmse(z, x) -> float:
    z, x = _pair(z, x)
    return float(np.sqrt(np.mean((z - x) ** 2)))


def psnr_from_rmse(err: float, peak: float = 1.0) -> float:
    if err == 0:
        return math.inf
    return 20.0 * math.log10(peak / err)


def psnr(z, x, peak: float = 1.0) -> float:
    """20 log10(peak / rmse); identical inputs give +inf."""
    return psnr_from_rmse(rmse(z, x), peak)


def ssim_metric(z, x, config: LossConfig | None = None) -> float:
    """Mean per-slice SSIM of [H, W] or [..., H, W] arrays, same path as the loss forward."""
    config = config or LossConfig(scales=1)
    z, x = _pair(z, x)
    with no_grad():
        xs = _as_images(Value(x), config.ssim_mode)
        zs = _as_images(Value(z), config.ssim_mode)
        per_image = _ssim_per_image(xs, zs, config).ssim
    return float(np.mean(per_image.data))


# -- ROIs -----------------------------------------------------------------------


@dataclass
class ROI:
    origin: tuple[int, int, int]
    extent: tuple[int, int, int]
    label: str = "roi"

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(o, o + e) for o, e in zip(self.origin, self.extent))

    def check_bounds(self, shape) -> None:
        if any(e <= 0 for e in self.extent):
            raise ValueError(f"ROI {self.label!r} is empty")
        if any(o < 0 or o + e > n for o, e, n in zip(self.origin, self.extent, shape)):
            raise ValueError(f"ROI {self.label!r} {self.origin}+{self.extent} outside volume {tuple(shape)}")


def pct_diff(value: float, reference: float) -> float:
    """(value - reference) / reference * 100."""
    return (value - reference) / reference * 100.0


def roi_stats(volume_hu, roi: ROI | None = None, reference_stats: dict | None = None, ddof: int = 0) -> dict:
    """Mean and SD (population by default) of HU over ``roi``, with percent differences.

    ``reference_stats`` carries ``mean`` and ``sd`` of the reference image; when
    given, ``pct_diff_mean`` and ``pct_diff_sd`` are added.
    """
    vol = np.asarray(volume_hu, dtype=np.float64)
    if roi is not None:
        roi.check_bounds(vol.shape)
        vol = vol[roi.slices()]
    if vol.size == 0:
        raise ValueError("empty ROI")
    out = {"mean": float(np.mean(vol)), "sd": float(np.std(vol, ddof=ddof))}
    if reference_stats is not None:
        out["pct_diff_mean"] = pct_diff(out["mean"], reference_stats["mean"])
        out["pct_diff_sd"] = pct_diff(out["sd"], reference_stats["sd"])
    return out


def load_rois(path) -> list[ROI]:
    """ROIs from a JSON list of ``{"origin": [z, y, x], "extent": [d, h, w], "label": ...}``."""
    import json

    items = json.loads(Path(path).read_text())
    return [ROI(tuple(r["origin"]), tuple(r["extent"]), r.get("label", f"roi{i}")) for i, r in enumerate(items)]


# -- rendering ---------------------------------------------------------------------


def window_bounds(window=DISPLAY_WINDOW, center_width: bool = False) -> tuple[float, float]:
    a, b = window
    lo, hi = (a - b / 2.0, a + b / 2.0) if center_width else (a, b)
    if not lo < hi:
        raise ValueError(f"display window needs lo < hi, got ({lo}, {hi})")
    return lo, hi


def apply_window(hu, window=DISPLAY_WINDOW, center_width: bool = False) -> np.ndarray:
    """Clamp HU to the window and map linearly to uint8, rounding half up."""
    lo, hi = window_bounds(window, center_width)
    scaled = (np.clip(np.asarray(hu, dtype=np.float64), lo, hi) - lo) / (hi - lo) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def render_slice(volume_hu, index: int, window=DISPLAY_WINDOW, center_width: bool = False) -> np.ndarray:
    vol = np.asarray(volume_hu)
    if not 0 <= index < vol.shape[0]:
        raise IndexError(f"slice {index} out of range for depth {vol.shape[0]}")
    return apply_window(vol[index], window, center_width)


def save_png(path, image: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(path)


def render_grid(images: Sequence[np.ndarray], columns: int | None = None, gap: int = 2) -> np.ndarray:
    """Tile equally sized uint8 images into one grid image (row-major)."""
    if not images:
        raise ValueError("nothing to render")
    h, w = images[0].shape
    cols = columns or len(images)
    rows = -(-len(images) // cols)
    grid = np.zeros((rows * h + (rows - 1) * gap, cols * w + (cols - 1) * gap), dtype=np.uint8)
    for i, im in enumerate(images):
        r, c = divmod(i, cols)
        grid[r * (h + gap):r * (h + gap) + h, c * (w + gap):c * (w + gap) + w] = im
    return grid


# -- reports --------------------------------------------------------------------------


@dataclass
class MetricsRecord:
    id: str
    method: str
    psnr_db: float
    ssim: float
    rmse: float
    roi_label: str = ""
    roi_mean_hu: float | None = None
    roi_sd_hu: float | None = None
    pct_diff_mean: float | None = None
    pct_diff_sd: float | None = None

    def __post_init__(self):
        if self.rmse < 0:
            raise ValueError("rmse must be >= 0")
        if self.ssim > 1.0 + 1e-12:
            raise ValueError("ssim must be <= 1")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6f}"
    return str(v)


def report_csv(records: Iterable[MetricsRecord]) -> str:
    records = list(records)
    if not records:
        raise ValueError("report needs at least one record")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in records:
        w.writerow([_fmt(getattr(r, f)) for f in REPORT_FIELDS])
    return buf.getvalue()


def emit_report(records: Iterable[MetricsRecord], path, png_path=None, images: Sequence[np.ndarray] | None = None) -> str:
    """Write the CSV report (and optionally a PNG grid of rendered slices); returns the CSV text."""
    text = report_csv(records)
    Path(path).write_text(text)
    if png_path is not None and images:
        save_png(png_path, render_grid(list(images)))
    return text


def evaluate_pair(ident: str, method: str, z_norm, x_norm, z_hu=None, x_hu=None, rois: Sequence[ROI] = (), ddof: int = 0) -> list[MetricsRecord]:
    """Records for one (image, method): a global row, plus one row per ROI when HU volumes are given."""
    err = rmse(z_norm, x_norm)
    base = dict(id=ident, method=method, psnr_db=psnr_from_rmse(err), ssim=ssim_metric(z_norm, x_norm), rmse=err)
    if not rois or z_hu is None or x_hu is None:
        return [MetricsRecord(**base)]
    out = []
    for roi in rois:
        ref = roi_stats(x_hu, roi, ddof=ddof)
        st = roi_stats(z_hu, roi, ref, ddof=ddof)
        out.append(
            MetricsRecord(
                **base,
                roi_label=roi.label,
                roi_mean_hu=st["mean"],
                roi_sd_hu=st["sd"],
                pct_diff_mean=st["pct_diff_mean"],
                pct_diff_sd=st["pct_diff_sd"],
            )
        )
    return out

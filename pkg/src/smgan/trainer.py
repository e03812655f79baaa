"""WGAN-GP training loop, loss-variant ablations, checkpoint I/O and volume denoising."""
from __future__ import annotations

import contextlib
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Value, no_grad
from .checkpoint import Checkpoint, CheckpointFormatError, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data.patches import extract_patches, stack_pairs
from .data.volume import Volume, denormalize_hu, normalize_hu
from .losses import critic_terms, generator_objective, structural_loss
from .metrics import psnr, ssim_metric
from .nets import Critic, Generator, init_generator_params, params_checksum
from .optim import Adam

log = logging.getLogger(__name__)

EPOCHLOG_FIELDS = ("epoch", "l1", "sl", "wasserstein", "wall_s")
STEPLOG_FIELDS = ("step", "epoch", "critic_loss", "wasserstein", "gp", "gen_loss")


class TrainingAborted(RuntimeError):
    """A loss went non-finite; ``dump`` holds the diagnostic state."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class EpochLog:
    epoch: int
    l1: float
    sl: float
    wasserstein: float
    wall_s: float

    def row(self) -> list[str]:
        return [str(self.epoch), repr(self.l1), repr(self.sl), repr(self.wasserstein), f"{self.wall_s:.3f}"]


@dataclass
class StepLog:
    step: int
    epoch: int
    critic_loss: float
    wasserstein: float
    gp: float
    gen_loss: float


@dataclass
class TrainResult:
    generator: Generator
    critic: Critic | None
    epochs: list[EpochLog] = field(default_factory=list)
    steps: list[StepLog] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


@contextlib.contextmanager
def frozen(params: Iterable[Value]):
    """Temporarily stop gradient flow into ``params``."""
    params = list(params)
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def center_crop(nd: np.ndarray, out_shape) -> np.ndarray:
    """Crop the trailing [D, H, W] axes of ``nd`` symmetrically to ``out_shape``."""
    d, h, w = nd.shape[-3:]
    od, oh, ow = out_shape
    z0, y0, x0 = (d - od) // 2, (h - oh) // 2, (w - ow) // 2
    return nd[..., z0:z0 + od, y0:y0 + oh, x0:x0 + ow]


def _rngs(seed: int):
    g, c, t = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(g), np.random.default_rng(c), np.random.default_rng(t)


def build_models(config: TrainConfig) -> tuple[Generator, Critic | None]:
    g_rng, c_rng, _ = _rngs(config.seed)
    gen = Generator(config.generator, g_rng)
    critic = Critic(config.critic, c_rng) if config.loss.uses_critic else None
    return gen, critic


def _volume_scorer(critic: Critic, two_d: bool) -> Callable[[Value], Value]:
    return lambda v: critic.score_volumes(v, replicate_single=two_d)


# -- checkpoints ------------------------------------------------------------------


def make_checkpoint(config: TrainConfig, gen: Generator, critic: Critic | None, opt_g: Adam, opt_d: Adam | None) -> Checkpoint:
    tensors: dict[str, np.ndarray] = {}
    for n, p in gen.params.items():
        tensors[f"generator/{n}"] = p.data
    if critic is not None:
        for n, p in critic.params.items():
            tensors[f"critic/{n}"] = p.data
    for tag, opt in (("adam_g", opt_g), ("adam_d", opt_d)):
        if opt is None:
            continue
        for n, m in opt.state.m.items():
            tensors[f"{tag}/m/{n}"] = m
        for n, v in opt.state.v.items():
            tensors[f"{tag}/v/{n}"] = v
    meta = config.to_dict()
    meta["adam_d_step"] = opt_d.state.step if opt_d is not None else 0
    return Checkpoint(tensors, opt_g.state.step, meta, config.architecture_hash())


def load_models(path, expected_hash: str | None = None):
    """(config, generator, critic, checkpoint) from a checkpoint file."""
    ckpt = load_checkpoint(path, expected_hash)
    meta = dict(ckpt.config)
    meta.pop("adam_d_step", None)
    try:
        config = TrainConfig.from_dict(meta)
    except (TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: stored config is not readable by this version: {exc}") from exc
    if ckpt.config_hash != config.architecture_hash():
        raise CheckpointFormatError(
            f"{path}: header hash {ckpt.config_hash!r} does not match its config ({config.architecture_hash()!r})"
        )
    gen_arrays = ckpt.group("generator")
    expected = init_generator_params(np.random.default_rng(0), config.generator)
    if {n: a.shape for n, a in gen_arrays.items()} != {n: v.shape for n, v in expected.items()}:
        raise CheckpointFormatError(f"{path}: generator tensors do not match the stored architecture")
    gen = Generator(config.generator, params={n: Value(a, requires_grad=True) for n, a in gen_arrays.items()})
    critic_arrays = ckpt.group("critic")
    critic = None
    if critic_arrays:
        critic = Critic(config.critic, params={n: Value(a, requires_grad=True) for n, a in critic_arrays.items()})
    return config, gen, critic, ckpt


# -- logs --------------------------------------------------------------------------


def write_epochlog(path, logs: list[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCHLOG_FIELDS)
        for e in logs:
            w.writerow(e.row())


def write_steplog(path, logs: list[StepLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEPLOG_FIELDS)
        for s in logs:
            w.writerow([s.step, s.epoch, repr(s.critic_loss), repr(s.wasserstein), repr(s.gp), repr(s.gen_loss)])


# -- training ------------------------------------------------------------------------


def _finite_or_abort(name: str, value: float, state: dict, out_dir: Path | None) -> None:
    if np.isfinite(value):
        return
    dump = dict(state, failed_term=name, value=repr(value))
    if out_dir is not None:
        (out_dir / "nan_abort.json").write_text(json.dumps(dump, indent=2, default=str) + "\n")
    raise TrainingAborted(f"non-finite {name} at epoch {state.get('epoch')} step {state.get('step')}", dump)


def train(
    config: TrainConfig,
    ldct: np.ndarray,
    ndct: np.ndarray,
    out_dir: str | Path | None = None,
    verify_isolation: bool = False,
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> TrainResult:
    """Train the generator (and critic, for adversarial variants) on patch arrays.

    ``ldct`` and ``ndct`` are [N, 1, D, H, W] normalised patches. Targets are
    the centre crops of ``ndct`` matching the generator output. Per
    iteration: ``n_critic`` critic updates on freshly drawn batches, then one
    generator update on the current batch.
    """
    ldct = np.asarray(ldct, dtype=np.float64)
    ndct = np.asarray(ndct, dtype=np.float64)
    if ldct.shape != ndct.shape or ldct.ndim != 5 or len(ldct) == 0:
        raise ValueError(f"need matching non-empty [N, 1, D, H, W] arrays, got {ldct.shape} and {ndct.shape}")
    if tuple(ldct.shape[2:]) != tuple(config.patch_shape):
        raise ValueError(f"patches are {ldct.shape[2:]}, config expects {config.patch_shape}")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    lcfg = config.loss
    gen, critic = build_models(config)
    _, _, rng = _rngs(config.seed)
    opt_g = Adam(gen.params, config.lr, config.adam_b1, config.adam_b2, config.adam_eps)
    opt_d = None
    if critic is not None:
        opt_d = Adam(critic.params, config.critic_lr or config.lr, config.adam_b1, config.adam_b2, config.adam_eps)
    two_d = config.generator.two_d
    scorer = _volume_scorer(critic, two_d) if critic is not None else None
    targets = center_crop(ndct, config.output_shape)
    # SL curve is logged for every variant; clamp scales to what the output size allows
    log_scales = lcfg.scales
    while log_scales > 1 and min(config.output_shape[1:]) // 2 ** (log_scales - 1) < lcfg.window_size:
        log_scales -= 1

    result = TrainResult(gen, critic)
    n = len(ldct)
    bs = min(config.batch_size, n)

    def checkpoint(tag: str) -> None:
        if out_dir is None:
            return
        path = out_dir / f"{tag}.ckpt"
        save_checkpoint(path, make_checkpoint(config, gen, critic, opt_g, opt_d))
        result.checkpoints.append(path)

    checkpoint("epoch0000")
    step = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        l1s, sls, ws = [], [], []
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            step += 1
            state = {"epoch": epoch, "step": step, "batch": idx.tolist()}
            c_loss = w_est = gp = 0.0
            if critic is not None:
                for _ in range(config.n_critic):
                    cidx = np.sort(rng.choice(n, size=bs, replace=False))
                    with no_grad():
                        z_c = gen(ldct[cidx])
                    g_sum = params_checksum(gen.params) if verify_isolation else None
                    terms = critic_terms(scorer, targets[cidx], z_c, lcfg.lambda_gp, rng)
                    c_loss, w_est, gp = terms.loss.item(), terms.wasserstein.item(), terms.penalty.item()
                    _finite_or_abort("critic loss", c_loss, state, out_dir)
                    opt_d.zero_grad()
                    terms.loss.backward()
                    opt_d.step()
                    if verify_isolation and params_checksum(gen.params) != g_sum:
                        raise AssertionError("critic update modified generator parameters")
                    ws.append(w_est)
                    result.steps.append(StepLog(step, epoch, c_loss, w_est, gp, float("nan")))
            c_sum = params_checksum(critic.params) if (verify_isolation and critic is not None) else None
            y, x = ldct[idx], targets[idx]
            with frozen(critic.parameters() if critic is not None else ()):
                z = gen(y)
                loss = generator_objective(x, z, scorer, lcfg)
                g_loss = loss.item()
                _finite_or_abort("generator loss", g_loss, state, out_dir)
                opt_g.zero_grad()
                loss.backward()
            opt_g.step()
            if c_sum is not None and params_checksum(critic.params) != c_sum:
                raise AssertionError("generator update modified critic parameters")
            if critic is not None:
                result.steps[-1].gen_loss = g_loss
            else:
                result.steps.append(StepLog(step, epoch, 0.0, 0.0, 0.0, g_loss))
            with no_grad():
                l1s.append(float(np.mean(np.abs(z.data - x))))
                sls.append(structural_loss(x, z.detach(), lcfg, scales=log_scales).item())
        entry = EpochLog(
            epoch,
            float(np.mean(l1s)),
            float(np.mean(sls)),
            float(np.mean(ws)) if ws else 0.0,
            time.perf_counter() - t0,
        )
        for name in ("l1", "sl", "wasserstein"):
            _finite_or_abort(f"epoch {name}", getattr(entry, name), {"epoch": epoch, "step": step}, out_dir)
        result.epochs.append(entry)
        log.info("epoch %d  l1=%.5f  sl=%.5f  w=%.5f  (%.1fs)", epoch, entry.l1, entry.sl, entry.wasserstein, entry.wall_s)
        if on_epoch is not None:
            on_epoch(entry)
        if out_dir is not None:
            write_epochlog(out_dir / "epochlog.csv", result.epochs)
            write_steplog(out_dir / "steplog.csv", result.steps)
            if config.checkpoint_every > 0 and epoch % config.checkpoint_every == 0:
                checkpoint(f"epoch{epoch:04d}")
    if out_dir is not None:
        write_epochlog(out_dir / "epochlog.csv", result.epochs)
        write_steplog(out_dir / "steplog.csv", result.steps)
        save_checkpoint(out_dir / "final.ckpt", make_checkpoint(config, gen, critic, opt_g, opt_d))
    return result


# -- datasets ----------------------------------------------------------------------------


@dataclass
class PatchDataset:
    train_ldct: np.ndarray
    train_ndct: np.ndarray
    val_ldct: np.ndarray | None
    val_ndct: np.ndarray | None
    train_ids: list[str]
    val_ids: list[str]


def split_volume_ids(ids: list[str], val_fraction: float, seed: int) -> tuple[list[str], list[str]]:
    """Hold out whole volumes (never patches of one volume on both sides)."""
    if val_fraction <= 0 or len(ids) < 2:
        return list(ids), []
    n_val = min(len(ids) - 1, max(1, int(round(val_fraction * len(ids)))))
    order = np.random.default_rng(seed).permutation(len(ids))
    val = {ids[i] for i in order[:n_val]}
    return [v for v in ids if v not in val], [v for v in ids if v in val]


def prepare_patches(pairs: list[tuple[Volume, Volume]], config: TrainConfig) -> PatchDataset:
    """Patch arrays for training and validation from (ldct, ndct) volume pairs."""
    if not pairs:
        raise ValueError("no volume pairs to train on")
    ids = [nd.id or f"vol{i}" for i, (_, nd) in enumerate(pairs)]
    if len(set(ids)) != len(ids):
        ids = [f"{v}#{i}" for i, v in enumerate(ids)]
    train_ids, val_ids = split_volume_ids(ids, config.val_fraction, config.seed)
    seeds = np.random.SeedSequence([config.seed, 1]).spawn(len(pairs))
    by_id: dict[str, list] = {}
    for vid, (ld, nd), ss in zip(ids, pairs, seeds):
        by_id[vid] = extract_patches(
            ld,
            nd,
            config.patch_shape,
            config.patch_stride,
            config.patch_budget,
            np.random.default_rng(ss),
            (config.hu_lo, config.hu_hi),
        )

    def gather(which):
        items = [p for vid in which for p in by_id[vid]]
        return stack_pairs(items) if items else (None, None)

    tl, tn = gather(train_ids)
    if tl is None:
        raise ValueError(f"volumes are smaller than the {config.patch_shape} patch")
    vl, vn = gather(val_ids)
    return PatchDataset(tl, tn, vl, vn, train_ids, val_ids)


# -- inference --------------------------------------------------------------------------


def predict_patches(gen: Generator, ldct: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Generator outputs for [N, 1, D, H, W] patches, evaluated in chunks without a graph."""
    outs = []
    with no_grad():
        for s in range(0, len(ldct), batch_size):
            outs.append(gen(ldct[s:s + batch_size]).data)
    return np.concatenate(outs, axis=0)


def evaluate_patches(gen: Generator, ldct: np.ndarray, ndct: np.ndarray, batch_size: int = 8) -> dict[str, float]:
    """Mean PSNR / SSIM of denoised and noisy patches against NDCT over the output region."""
    z = predict_patches(gen, ldct, batch_size)
    out_shape = z.shape[2:]
    x = center_crop(ndct, out_shape)
    y = center_crop(ldct, out_shape)
    return {
        "psnr_denoised": float(np.mean([psnr(a, b) for a, b in zip(z, x)])),
        "psnr_noisy": float(np.mean([psnr(a, b) for a, b in zip(y, x)])),
        "ssim_denoised": float(np.mean([ssim_metric(a[0], b[0]) for a, b in zip(z, x)])),
        "ssim_noisy": float(np.mean([ssim_metric(a[0], b[0]) for a, b in zip(y, x)])),
    }


def _tile_starts(n: int, window: int, step: int) -> list[int]:
    starts = list(range(0, n - window + 1, step))
    if starts[-1] != n - window:
        starts.append(n - window)
    return starts


def denoise_volume(
    gen: Generator,
    volume: Volume,
    patch_shape,
    hu_range=(-1024.0, 3071.0),
    batch_size: int = 4,
) -> Volume:
    """Denoise a whole volume; output has the input's shape.

    The normalised volume is mirror-padded by the generator's margins, tiled
    with input windows whose outputs abut, and overlapping outputs (at the
    far borders) are averaged.
    """
    lo, hi = hu_range
    d, h, w = volume.shape
    pd, ph, pw = patch_shape
    md, ms = gen.spec.depth_margin, gen.spec.spatial_margin
    od, oh, ow = pd - md, ph - ms, pw - ms
    if d < od or h < oh or w < ow:
        raise ValueError(f"volume {volume.shape} smaller than one output window {(od, oh, ow)}")
    x = normalize_hu(volume, lo, hi)
    padded = np.pad(x, ((md // 2, md - md // 2), (ms // 2, ms - ms // 2), (ms // 2, ms - ms // 2)), mode="symmetric")
    acc = np.zeros((d, h, w))
    cnt = np.zeros((d, h, w))
    origins = [(z, y, xx) for z in _tile_starts(d, od, od) for y in _tile_starts(h, oh, oh) for xx in _tile_starts(w, ow, ow)]
    for s in range(0, len(origins), batch_size):
        chunk = origins[s:s + batch_size]
        tiles = np.stack([padded[z:z + pd, y:y + ph, xx:xx + pw] for z, y, xx in chunk])[:, None]
        with no_grad():
            out = gen(tiles).data[:, 0]
        for (z, y, xx), o in zip(chunk, out):
            acc[z:z + od, y:y + oh, xx:xx + ow] += o
            cnt[z:z + od, y:y + oh, xx:xx + ow] += 1.0
    return Volume(denormalize_hu(acc / cnt, lo, hi), volume.spacing, volume.id)


def denoise(checkpoint_path, volume: Volume, batch_size: int = 4) -> Volume:
    config, gen, _, _ = load_models(checkpoint_path)
    return denoise_volume(gen, volume, config.patch_shape, (config.hu_lo, config.hu_hi), batch_size)

"""``smgan`` command line: phantom generation, training, denoising, evaluation, gradcheck.

Exit codes: 0 ok, 1 gradcheck violation, 2 usage / bad config, 3 numeric
abort, 4 file format or checkpoint mismatch.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import platform
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointFormatError
from .config import CLI_VARIANTS, ConfigError, TrainConfig, _flat_keys, apply_overrides, desk_config, dump_kv, parse_kv
from .data.phantom import NOISE_GAIN, degrade, generate_phantom
from .data.volume import VolumeFormatError, load_pairs, normalize_hu, read_manifest, read_volume, write_manifest, write_volume
from .metrics import ROI, emit_report, evaluate_pair, load_rois, render_slice
from .trainer import TrainingAborted, denoise_volume, evaluate_patches, load_models, prepare_patches, train

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC, EXIT_FORMAT = 0, 1, 2, 3, 4

log = logging.getLogger("smgan")


class UsageError(Exception):
    pass


def _int_triple(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(p) for p in text.replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected D,H,W integers, got {text!r}") from None
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"expected three positive integers, got {text!r}")
    return parts


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def write_run_manifest(out_dir: Path, command: str, argv: list[str], **extra) -> Path:
    """Everything needed to rerun ``command``: argv, effective settings, build id, library versions."""
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "argv": argv,
        "build": _build_id(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "threads": os.environ.get("SMGAN_THREADS"),
    }
    doc.update(extra)
    path = out_dir / f"run_manifest_{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path


# -- subcommands ------------------------------------------------------------------


def cmd_phantom(args, argv) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UsageError(f"cannot create {out}: {e}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"{out} is not writable")
    seeds = np.random.SeedSequence(args.seed).spawn(args.count)
    entries = []
    for i, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        vid = f"phantom{i:03d}"
        nd = generate_phantom(rng, args.shape, args.ellipsoids, id=vid)
        ld = degrade(nd, args.dose, args.sigma_e, rng, args.noise_gain)
        write_volume(out / f"{vid}_ndct", nd)
        write_volume(out / f"{vid}_ldct", ld)
        entries.append({"id": vid, "ldct_path": f"{vid}_ldct.raw", "ndct_path": f"{vid}_ndct.raw"})
    write_manifest(out / "manifest.json", entries)
    write_run_manifest(
        out,
        "phantom",
        argv,
        seed=args.seed,
        count=args.count,
        shape=list(args.shape),
        dose=args.dose,
        sigma_e=args.sigma_e,
        noise_gain=args.noise_gain,
        ellipsoids=args.ellipsoids,
    )
    print(f"wrote {args.count} volume pairs to {out}")
    return EXIT_OK


def effective_config(args) -> TrainConfig:
    """Preset, then config file, then CLI flags (later sources win)."""
    base = desk_config() if args.preset == "desk" else TrainConfig()
    values: dict[str, str] = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} not found")
        values.update(parse_kv(path.read_text()))
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    for key in _flat_keys():
        v = getattr(args, _dest(key), None) if key != "variant" else None
        if v is not None:
            values[key] = v
    if args.variant:
        values["variant"] = args.variant
    return apply_overrides(base, values)


def cmd_train(args, argv) -> int:
    config = effective_config(args)
    manifest = Path(args.data)
    if not manifest.is_file():
        raise UsageError(f"manifest {manifest} not found")
    pairs = load_pairs(manifest)
    data = prepare_patches(pairs, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_kv(config))
    write_run_manifest(
        out,
        "train",
        argv,
        seed=config.seed,
        config=config.to_dict(),
        architecture_hash=config.architecture_hash(),
        data=str(manifest.resolve()),
        train_ids=data.train_ids,
        val_ids=data.val_ids,
        n_train_patches=int(len(data.train_ldct)),
    )
    log.info("training %s on %d patches (%d volumes)", config.variant, len(data.train_ldct), len(data.train_ids))
    try:
        result = train(config, data.train_ldct, data.train_ndct, out)
    except TrainingAborted as e:
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    if data.val_ldct is not None and config.epochs > 0:
        metrics = evaluate_patches(result.generator, data.val_ldct, data.val_ndct)
        (out / "val_metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
        print(
            f"validation PSNR {metrics['psnr_denoised']:.3f} dB (noisy {metrics['psnr_noisy']:.3f} dB), "
            f"SSIM {metrics['ssim_denoised']:.4f} (noisy {metrics['ssim_noisy']:.4f})"
        )
    print(f"wrote checkpoints and epochlog.csv to {out}")
    return EXIT_OK


def cmd_denoise(args, argv) -> int:
    vol = read_volume(args.inp)
    config, gen, _, _ = load_models(args.ckpt)
    out = denoise_volume(gen, vol, config.patch_shape, (config.hu_lo, config.hu_hi), args.batch_size)
    side = write_volume(args.out, out)
    write_run_manifest(
        side.parent,
        "denoise",
        argv,
        checkpoint=str(Path(args.ckpt).resolve()),
        input=str(Path(args.inp).resolve()),
        config=config.to_dict(),
    )
    print(f"wrote {side.with_suffix('.raw')}")
    return EXIT_OK


def _parse_ckpt_arg(text: str) -> tuple[str, str]:
    if "=" in text:
        label, path = text.split("=", 1)
        return label, path
    return Path(text).stem, text


def cmd_eval(args, argv) -> int:
    entries = read_manifest(args.pairs)
    rois: list[ROI] = load_rois(args.rois) if args.rois else []
    models = []
    for item in args.ckpt or []:
        label, path = _parse_ckpt_arg(item)
        config, gen, _, _ = load_models(path)
        models.append((label, config, gen))
    render_dir = Path(args.render) if args.render else None
    if render_dir is not None:
        render_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for e in entries:
        ld, nd = read_volume(e["ldct_path"]), read_volume(e["ndct_path"])
        if ld.shape != nd.shape:
            raise VolumeFormatError(f"{e['id']}: LDCT {ld.shape} and NDCT {nd.shape} differ")
        x_norm = normalize_hu(nd)
        outputs = [("ndct", nd), ("ldct", ld)]
        for label, config, gen in models:
            outputs.append((label, denoise_volume(gen, ld, config.patch_shape, (config.hu_lo, config.hu_hi))))
        for method, vol in outputs:
            records += evaluate_pair(e["id"], method, normalize_hu(vol), x_norm, vol.voxels, nd.voxels, rois, args.ddof)
        if render_dir is not None:
            from .metrics import render_grid, save_png

            mid = nd.shape[0] // 2
            save_png(render_dir / f"{e['id']}.png", render_grid([render_slice(v.voxels, mid) for _, v in outputs]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    emit_report(records, out)
    write_run_manifest(
        out.parent,
        "eval",
        argv,
        pairs=str(Path(args.pairs).resolve()),
        rois=args.rois,
        checkpoints=args.ckpt or [],
        methods=["ndct", "ldct"] + [m[0] for m in models],
    )
    print(f"wrote {len(records)} rows to {out}")
    return EXIT_OK


def cmd_gradcheck(args, argv) -> int:
    from .gradsuite import format_results, timed_suite

    results, elapsed = timed_suite(args.tol, args.seed)
    print(format_results(results, elapsed))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


# -- parser -------------------------------------------------------------------------


def _dest(key: str) -> str:
    return "cfg__" + key.replace(".", "__")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smgan", description="Structurally-sensitive GAN denoising for low-dose CT.")
    p.add_argument("--version", action="version", version=f"smgan {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="write synthetic NDCT/LDCT volume pairs and a manifest")
    ph.add_argument("--count", type=int, required=True)
    ph.add_argument("--shape", type=_int_triple, required=True, help="D,H,W")
    ph.add_argument("--dose", type=_positive_float, default=0.25, help="dose fraction (1 = full dose)")
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--out", required=True)
    ph.add_argument("--sigma-e", type=float, default=10.0, help="electronic noise SD in HU")
    ph.add_argument("--noise-gain", type=float, default=NOISE_GAIN, help="quantum noise variance per HU of attenuation")
    ph.add_argument("--ellipsoids", type=int, default=10)
    ph.set_defaults(func=cmd_phantom)

    tr = sub.add_parser("train", help="train a generator (and critic) on a manifest of volume pairs")
    tr.add_argument("--variant", choices=sorted(CLI_VARIANTS))
    tr.add_argument("--data", required=True, help="dataset manifest (JSON)")
    tr.add_argument("--config", help="key = value config file")
    tr.add_argument("--out", required=True)
    tr.add_argument("--preset", choices=("full", "desk"), default="full")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    keys = tr.add_argument_group("config keys (override the file)")
    for key in _flat_keys():
        if key == "variant":
            continue  # --variant above
        keys.add_argument("--" + key.replace("_", "-"), dest=_dest(key), metavar="V", default=None)
    tr.set_defaults(func=cmd_train)

    dn = sub.add_parser("denoise", help="denoise one volume with a checkpoint")
    dn.add_argument("--ckpt", required=True)
    dn.add_argument("--in", dest="inp", required=True)
    dn.add_argument("--out", required=True)
    dn.add_argument("--batch-size", type=int, default=4)
    dn.set_defaults(func=cmd_denoise)

    ev = sub.add_parser("eval", help="PSNR / SSIM / RMSE and ROI statistics as CSV")
    ev.add_argument("--pairs", required=True, help="dataset manifest (JSON)")
    ev.add_argument("--rois", help="ROI list (JSON)")
    ev.add_argument("--out", required=True, help="CSV report path")
    ev.add_argument("--render", help="directory for PNG renderings")
    ev.add_argument("--ckpt", action="append", metavar="[LABEL=]FILE", help="also evaluate this model's output")
    ev.add_argument("--ddof", type=int, default=0, choices=(0, 1), help="SD degrees of freedom")
    ev.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    gc.add_argument("--tol", type=_positive_float, default=1e-4)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return p


@contextlib.contextmanager
def _thread_cap():
    raw = os.environ.get("SMGAN_THREADS")
    if not raw:
        yield
        return
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SMGAN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("SMGAN_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_cap():
            return args.func(args, argv)
    except (UsageError, ConfigError) as e:
        print(f"smgan {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (VolumeFormatError, CheckpointFormatError, json.JSONDecodeError) as e:
        print(f"smgan {args.command}: format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as e:
        print(f"smgan {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"smgan {args.command}: numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

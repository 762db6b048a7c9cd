"""Command-line surface tying the pipeline together.

Subcommands: simulate, fbp, irtnv, train, denoise, evaluate.  Every command
takes `--config PATH` (INI-style run configuration; built-in defaults
reproduce the desk-scale experiment), `--out DIR`, `--seed S` (overrides the
config seeds), `--threads N` (0 = auto) and `--dry-run` (validate the
configuration without touching outputs).  The SCTLAB_LOG environment
variable (error|info|debug) controls verbosity.  Exit code 0 on success,
nonzero with a one-line diagnostic on stderr otherwise.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import threads as _threads
from .config import ConfigError, RunConfig, default_config_text

log = logging.getLogger("sctlab")


def _setup_logging() -> None:
    level_name = os.environ.get("SCTLAB_LOG", "info").lower()
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        level_name, logging.INFO
    )
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s"
    )


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.out is not None:
        cfg.set("paths", "out", args.out)
    if args.seed is not None:
        cfg.set("dataset", "seed", args.seed)
        cfg.set("train", "seed", args.seed)
    return cfg


def _manifest_path(cfg: RunConfig, split: str) -> Path:
    return cfg.out_dir() / "dataset" / f"{split}_manifest.txt"


def cmd_simulate(args) -> int:
    from .phantom import generate_dataset

    cfg = _load_config(args)
    geom = cfg.geometry()
    out = cfg.out_dir() / "dataset"
    if args.dry_run:
        log.info("dry-run: would simulate into %s", out)
        return 0
    seed = cfg.get_int("dataset", "seed")
    common = dict(
        geom=geom,
        channels=cfg.get_int("dataset", "channels"),
        noise_level=cfg.get_float("dataset", "noise_level"),
        max_objects=cfg.get_int("dataset", "max_objects"),
    )
    train_manifest = generate_dataset(
        cfg.get_int("dataset", "train_count"), seed, out, prefix="train", **common
    )
    test_manifest = generate_dataset(
        cfg.get_int("dataset", "test_count"), seed + 1, out, prefix="test", **common
    )
    log.info("wrote %s and %s", train_manifest, test_manifest)
    return 0


def _recon_split(args, cfg: RunConfig) -> str:
    return getattr(args, "split", "test") or "test"


def cmd_fbp(args) -> int:
    from .core import read_stack, write_stack
    from .fbp import fbp_reconstruct
    from .phantom import load_manifest

    cfg = _load_config(args)
    spec = cfg.filter_spec()
    split = _recon_split(args, cfg)
    manifest = _manifest_path(cfg, split)
    out = cfg.out_dir() / f"fbp_{spec.kind}_{spec.freq_scale:g}".replace(".", "p")
    if args.dry_run:
        log.info("dry-run: would reconstruct %s into %s", manifest, out)
        return 0
    entries = load_manifest(manifest)
    out.mkdir(parents=True, exist_ok=True)
    for entry in entries:
        sino = read_stack(entry["sinogram_path"])
        rec = fbp_reconstruct(sino, spec)
        write_stack(rec, out / f"{split}_{int(entry['index']):04d}_recon.scts")
    log.info("reconstructed %d slices into %s", len(entries), out)
    return 0


def cmd_irtnv(args) -> int:
    from .core import read_stack, write_stack
    from .irsolver import ir_tnv_reconstruct
    from .phantom import load_manifest

    cfg = _load_config(args)
    params = cfg.solver_params()
    split = _recon_split(args, cfg)
    manifest = _manifest_path(cfg, split)
    out = cfg.out_dir() / "irtnv"
    if args.dry_run:
        log.info("dry-run: would run IR-TNV on %s into %s", manifest, out)
        return 0
    entries = load_manifest(manifest)
    out.mkdir(parents=True, exist_ok=True)
    for entry in entries:
        sino = read_stack(entry["sinogram_path"])
        idx = int(entry["index"])
        rec = ir_tnv_reconstruct(
            sino, params, log_csv=out / f"{split}_{idx:04d}_objective.csv"
        )
        write_stack(rec, out / f"{split}_{idx:04d}_recon.scts")
    log.info("reconstructed %d slices into %s", len(entries), out)
    return 0


def cmd_train(args) -> int:
    from .training import train_low2high, train_supervised

    cfg = _load_config(args)
    tconf = cfg.train_config()
    geom = cfg.geometry()
    out = cfg.out_dir() / f"train_{tconf.mode}"
    split = getattr(args, "split", None) or (
        "test" if tconf.mode == "low2high" else "train"
    )
    manifest = _manifest_path(cfg, split)
    if args.dry_run:
        log.info("dry-run: would train %s on %s into %s", tconf.mode, manifest, out)
        return 0
    if tconf.mode == "supervised":
        result = train_supervised(manifest, geom, tconf, out_dir=out)
    else:
        result = train_low2high(manifest, geom, tconf, out_dir=out)
    result.write_log(out / "loss_log.csv")
    log.info("trained %s for %d epochs; checkpoints in %s", tconf.mode, tconf.epochs, out)
    return 0


def cmd_denoise(args) -> int:
    from .core import read_stack, write_stack
    from .neural import load_checkpoint
    from .phantom import load_manifest
    from .training import denoise_stack

    cfg = _load_config(args)
    model = load_checkpoint(args.checkpoint)
    split = _recon_split(args, cfg)
    manifest = _manifest_path(cfg, split)
    out = cfg.out_dir() / f"denoised_{model.meta.get('mode', 'model')}"
    if args.dry_run:
        log.info("dry-run: would denoise %s with %s into %s", manifest, args.checkpoint, out)
        return 0
    entries = load_manifest(manifest)
    out.mkdir(parents=True, exist_ok=True)
    for entry in entries:
        sino = read_stack(entry["sinogram_path"])
        rec = denoise_stack(model, sino)
        write_stack(rec, out / f"{split}_{int(entry['index']):04d}_recon.scts")
    log.info("denoised %d slices into %s", len(entries), out)
    return 0


def cmd_evaluate(args) -> int:
    from .core import read_stack
    from .evalkit import auto_rois, evaluate_dataset
    from .phantom import load_manifest, sample_phantom

    cfg = _load_config(args)
    split = _recon_split(args, cfg)
    manifest = _manifest_path(cfg, split)
    out = cfg.out_dir() / "report"
    if args.dry_run:
        log.info("dry-run: would evaluate methods in %s into %s", cfg.out_dir(), out)
        return 0
    entries = load_manifest(manifest)
    n = len(entries)
    methods = {}
    for method_dir in sorted(cfg.out_dir().glob("*")):
        if not method_dir.is_dir():
            continue
        stacks = sorted(method_dir.glob(f"{split}_*_recon.scts"))
        if len(stacks) == n and n > 0:
            methods[method_dir.name] = [read_stack(p) for p in stacks]
    if not methods:
        print("error: no reconstruction directories found to evaluate", file=sys.stderr)
        return 1

    rois = None
    roi_slice = cfg.get_int("eval", "roi_slice")
    geom = cfg.geometry()
    try:
        objects = sample_phantom(int(entries[roi_slice]["seed"]))
        rois = auto_rois(objects, *geom.image_size)
    except (ValueError, IndexError):
        log.info("no usable ROI on slice %d; skipping CNR/SNR", roi_slice)
    evaluate_dataset(
        manifest, methods, out, rois=rois, roi_slice=roi_slice, window=cfg.eval_window()
    )
    log.info("report written to %s (methods: %s)", out, ", ".join(sorted(methods)))
    return 0


def cmd_print_config(args) -> int:
    print(default_config_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sctlab",
        description="Sparse-view spectral CT laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, extra=None):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="run configuration file")
        p.add_argument("--out", default=None, help="output directory (overrides [paths] out)")
        p.add_argument("--seed", type=int, default=None, help="override config seeds")
        p.add_argument("--threads", type=int, default=0, help="worker count (0 = auto)")
        p.add_argument("--dry-run", action="store_true", help="validate config only")
        if extra:
            extra(p)
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate, "generate a synthetic train/test dataset")
    add("fbp", cmd_fbp, "filtered backprojection over a dataset split",
        lambda p: p.add_argument("--split", default="test", choices=["train", "test"]))
    add("irtnv", cmd_irtnv, "TNV-regularized iterative reconstruction",
        lambda p: p.add_argument("--split", default="test", choices=["train", "test"]))
    add("train", cmd_train, "train the supervised or Low2High denoiser",
        lambda p: p.add_argument("--split", default=None, choices=["train", "test"]))
    add("denoise", cmd_denoise, "apply a trained checkpoint to a dataset split",
        lambda p: (p.add_argument("checkpoint", help="path to a .sctm checkpoint"),
                   p.add_argument("--split", default="test", choices=["train", "test"])))
    add("evaluate", cmd_evaluate, "metrics report over reconstruction methods",
        lambda p: p.add_argument("--split", default="test", choices=["train", "test"]))
    p = sub.add_parser("print-config", help="print the default configuration file")
    p.set_defaults(func=cmd_print_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 0):
        _threads.set_worker_count(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

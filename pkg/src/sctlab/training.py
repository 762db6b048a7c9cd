"""Training regimes (supervised and Low2High) and inference-time denoising.

Both regimes train a residual UNet on single slices with batch size 1.  Per
step the supervised regime picks a slice and a single random channel, the
Low2High regime a slice and a window of 4 adjacent channels; slice order is
a fresh shuffled pass over the dataset each epoch, and channel windows are
drawn from a shuffled deck covering every valid window before any repeats,
so an epoch with at least as many steps as windows touches them all.

FBP inputs are reconstructed once per dataset and cached as stack files;
Low2High consumes only sinograms (no reference stack is ever read).

Normalization (used for the synthetic data): inputs and targets are divided
by the input stack's global max; inference feeds x/s through the network and
adds s * correction back onto the unscaled input, so the identity network
returns its input bit-exactly and outputs stay in LAC units.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .core import SpectralStack, read_stack, write_stack
from .fbp import HANN_LOW, HANN_SUPERVISED, RAM_LAK, FilterSpec, fbp_reconstruct
from .geometry import FanGeometry
from .neural import (
    AdamState,
    UNetConfig,
    UNetModel,
    adam_step,
    loss_low2high,
    loss_supervised,
    save_checkpoint,
    unet_residual,
)
from .neural import unet_init
from .phantom import load_manifest

log = logging.getLogger("sctlab.training")

WINDOW = 4  # adjacent spectral channels fed to the unsupervised network


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "low2high"  # "supervised" | "low2high"
    epochs: int = 50
    lr: float = 1e-4
    batch: int = 1
    lam: float = 0.005
    normalize: bool = True
    seed: int = 0
    unet: UNetConfig | None = None
    tnv_eps: float = 1e-8
    keep_best: bool = False  # track best-PSNR checkpoint on a validation split

    def __post_init__(self) -> None:
        if self.mode not in ("supervised", "low2high"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.batch != 1:
            raise ValueError("only batch size 1 is supported")
        if self.unet is None:
            channels = 1 if self.mode == "supervised" else WINDOW
            object.__setattr__(self, "unet", UNetConfig(in_channels=channels))


@dataclass
class TrainResult:
    model: UNetModel
    loss_rows: list[tuple]  # (epoch, step, loss, data_term, tnv_term, lr)
    window_history: list[int] | None = None

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "step", "loss", "data_term", "tnv_term", "lr"])
            writer.writerows(self.loss_rows)


def _fbp_cache_path(cache_dir: Path, sino_path: str, spec: FilterSpec) -> Path:
    tag = f"{spec.kind}_{spec.freq_scale:g}".replace(".", "p")
    return cache_dir / f"{Path(sino_path).stem}_fbp_{tag}.scts"


def cache_fbp_stacks(
    sino_paths: list[str], specs: list[FilterSpec], cache_dir: str | Path
) -> None:
    """Reconstruct and store FBPs for every (sinogram, filter) pair once."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    for sino_path in sino_paths:
        missing = [
            s for s in specs if not _fbp_cache_path(cache_dir, sino_path, s).exists()
        ]
        if not missing:
            continue
        sino = read_stack(sino_path)
        for spec in missing:
            write_stack(
                fbp_reconstruct(sino, spec),
                _fbp_cache_path(cache_dir, sino_path, spec),
            )


@lru_cache(maxsize=24)
def _load_values(path: str) -> np.ndarray:
    return read_stack(path).values


def _shuffled_deck(rng: np.random.Generator, n_items: int, n_steps: int) -> list[int]:
    """Concatenated shuffled permutations, truncated to n_steps draws."""
    deck: list[int] = []
    while len(deck) < n_steps:
        deck.extend(rng.permutation(n_items).tolist())
    return deck[:n_steps]


def _norm_scale(values: np.ndarray, enabled: bool) -> float:
    if not enabled:
        return 1.0
    scale = float(np.max(np.abs(values)))
    return scale if scale > 0 else 1.0


def _run_training(
    config: TrainConfig,
    n_slices: int,
    sample_step,
    out_dir: str | Path | None,
) -> TrainResult:
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    model = unet_init(config.unet, seed=config.seed)
    model.meta["mode"] = config.mode
    model.meta["normalize"] = "true" if config.normalize else "false"
    state = AdamState(lr0=config.lr, total_epochs=config.epochs)
    rows: list[tuple] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    last_good = model.copy()

    for epoch in range(config.epochs):
        state.set_epoch(epoch)
        slice_order = rng.permutation(n_slices).tolist()
        aux_deck = iter(_shuffled_deck(rng, max(sample_step.n_choices, 1), n_slices))
        for step, slice_idx in enumerate(slice_order):
            loss, grads, data_term, tnv_term = sample_step(
                model, slice_idx, next(aux_deck), rng
            )
            if not math.isfinite(loss):
                log.error("non-finite loss at epoch %d step %d; aborting", epoch, step)
                if out_dir is not None:
                    save_checkpoint(last_good, out_dir / "last_good.sctm")
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}, step {step}"
                )
            model, state = adam_step(state, model, grads)
            rows.append((epoch, step, loss, data_term, tnv_term, state.lr))
        last_good = model.copy()
        if out_dir is not None:
            save_checkpoint(model, out_dir / f"ckpt_epoch_{epoch:03d}.sctm")
        log.info(
            "epoch %d/%d mean loss %.6g lr %.3g",
            epoch + 1,
            config.epochs,
            float(np.mean([r[2] for r in rows[-n_slices:]])),
            state.lr,
        )
    if out_dir is not None:
        save_checkpoint(model, out_dir / "final.sctm")
    return TrainResult(model, rows)


def train_supervised(
    manifest: str | Path,
    geom: FanGeometry,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    cache_dir: str | Path | None = None,
    ref_paths: list[str] | None = None,
) -> TrainResult:
    """Train on (FBP hann 0.6, reference) pairs; one random channel per step.

    References default to the manifest's phantom stacks (synthetic ground
    truth); pass `ref_paths` to train against e.g. iterative reconstructions.
    """
    config = replace(config, mode="supervised") if config.mode != "supervised" else config
    entries = load_manifest(manifest)
    if not entries:
        raise ValueError(f"empty manifest {manifest}")
    sino_paths = [e["sinogram_path"] for e in entries]
    refs = ref_paths if ref_paths is not None else [e["phantom_path"] for e in entries]
    if len(refs) != len(entries):
        raise ValueError("ref_paths length must match the manifest")
    cache_dir = Path(cache_dir) if cache_dir is not None else Path(manifest).parent / "fbp_cache"
    cache_fbp_stacks(sino_paths, [HANN_SUPERVISED], cache_dir)
    inputs = [str(_fbp_cache_path(cache_dir, p, HANN_SUPERVISED)) for p in sino_paths]

    channels = _load_values(inputs[0]).shape[0]

    class Step:
        n_choices = channels

        def __call__(self, model, slice_idx, channel, rng):
            x_in = _load_values(inputs[slice_idx])
            x_ref = _load_values(refs[slice_idx])
            scale = _norm_scale(x_in, config.normalize)
            a = (x_in[channel : channel + 1] / scale).astype(np.float32)
            b = (x_ref[channel : channel + 1] / scale).astype(np.float32)
            loss, grads = loss_supervised(model, a, b)
            return loss, grads, loss, 0.0

    return _run_training(config, len(entries), Step(), out_dir)


def train_low2high(
    manifest: str | Path,
    geom: FanGeometry,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    cache_dir: str | Path | None = None,
) -> TrainResult:
    """Unsupervised training on (Hann s=0.2, Ram-Lak) FBP pairs of the same
    sinogram, with the TNV penalty weighted by config.lam; 4 adjacent
    channels per step.  Only sinogram files are read."""
    config = replace(config, mode="low2high") if config.mode != "low2high" else config
    entries = load_manifest(manifest)
    if not entries:
        raise ValueError(f"empty manifest {manifest}")
    sino_paths = [e["sinogram_path"] for e in entries]
    cache_dir = Path(cache_dir) if cache_dir is not None else Path(manifest).parent / "fbp_cache"
    cache_fbp_stacks(sino_paths, [HANN_LOW, RAM_LAK], cache_dir)
    lo_paths = [str(_fbp_cache_path(cache_dir, p, HANN_LOW)) for p in sino_paths]
    hi_paths = [str(_fbp_cache_path(cache_dir, p, RAM_LAK)) for p in sino_paths]

    channels = _load_values(lo_paths[0]).shape[0]
    if channels < WINDOW:
        raise ValueError(f"low2high needs >= {WINDOW} channels, got {channels}")
    n_windows = channels - WINDOW + 1

    window_log: list[int] = []

    class Step:
        n_choices = n_windows

        def __call__(self, model, slice_idx, window_start, rng):
            window_log.append(window_start)
            x_lo = _load_values(lo_paths[slice_idx])
            x_hi = _load_values(hi_paths[slice_idx])
            scale = _norm_scale(x_lo, config.normalize)
            sl = slice(window_start, window_start + WINDOW)
            a = (x_lo[sl] / scale).astype(np.float32)
            b = (x_hi[sl] / scale).astype(np.float32)
            loss, grads, data_term, tnv_term = loss_low2high(
                model, a, b, config.lam, tnv_eps=config.tnv_eps
            )
            return loss, grads, data_term, tnv_term

    result = _run_training(config, len(entries), Step(), out_dir)
    return TrainResult(result.model, result.loss_rows, window_history=window_log)


def denoise_stack(
    model: UNetModel,
    sino,
    geom: FanGeometry | None = None,
    normalize: bool | None = None,
) -> SpectralStack:
    """Apply a trained denoiser to a sinogram stack.

    Single-channel models run per channel on the Hann(0.6) FBP; 4-channel
    models run on sliding windows of the Hann(0.2) FBP and overlapping
    channel outputs are averaged.
    """
    in_ch = model.config.in_channels
    if normalize is None:
        normalize = model.meta.get("normalize", "true") == "true"
    spec = HANN_SUPERVISED if in_ch == 1 else HANN_LOW
    fbp = fbp_reconstruct(sino, spec)
    x = fbp.values
    c = x.shape[0]
    if c < in_ch:
        raise ValueError(f"need >= {in_ch} channels, got {c}")
    scale = _norm_scale(x, normalize)

    corr_sum = np.zeros_like(x)
    counts = np.zeros(c)
    if in_ch == 1:
        for b in range(c):
            xin = (x[b : b + 1] / scale).astype(np.float32)
            corr_sum[b] = unet_residual(model, xin)[0].astype(np.float64)
            counts[b] = 1.0
    else:
        for start in range(0, c - in_ch + 1):
            sl = slice(start, start + in_ch)
            xin = (x[sl] / scale).astype(np.float32)
            corr_sum[sl] += unet_residual(model, xin).astype(np.float64)
            counts[sl] += 1.0
    out = x + scale * (corr_sum / counts[:, None, None])
    return SpectralStack(out, fbp.energies, provenance=fbp.provenance)

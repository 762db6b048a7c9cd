"""Image-quality metrics, ROI statistics, LAC curves and MIP rendering.

Conventions fixed here: PSNR peak defaults to the reference maximum; SSIM
uses an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03 and takes
the dynamic range from the reference; CNR = |mu_T - mu_BG| / sigma_BG and
SNR = mu_T / sigma_BG with Bessel-corrected background deviation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import SpectralStack, export_pgm, read_stack
from .phantom import PhantomObject, fov_mask, load_manifest, object_mask

DEFAULT_WINDOW = (-0.002, 0.03)  # display window for exported images


@dataclass(frozen=True)
class RoiSpec:
    """A labelled set of pixels, either a boolean mask or a rectangle."""

    label: str
    pixels: np.ndarray  # boolean (H, W) mask
    role: str = "target"  # "target" | "background"

    def __post_init__(self) -> None:
        mask = np.asarray(self.pixels, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("ROI mask must be 2-D")
        if not mask.any():
            raise ValueError(f"ROI {self.label!r} is empty")
        if self.role not in ("target", "background"):
            raise ValueError(f"unknown ROI role {self.role!r}")
        object.__setattr__(self, "pixels", mask)

    @staticmethod
    def from_rect(label, top, left, height, width, shape, role="target") -> "RoiSpec":
        mask = np.zeros(shape, dtype=bool)
        if top < 0 or left < 0 or top + height > shape[0] or left + width > shape[1]:
            raise ValueError("rectangle ROI outside image bounds")
        mask[top : top + height, left : left + width] = True
        return RoiSpec(label, mask, role)


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, SpectralStack) else np.asarray(x, dtype=np.float64)


def psnr(x, ref, peak: float | None = None) -> float:
    """10 log10(peak^2 / MSE); +inf for identical inputs."""
    xv, rv = _values(x), _values(ref)
    if xv.shape != rv.shape:
        raise ValueError(f"shape mismatch {xv.shape} vs {rv.shape}")
    if peak is None:
        peak = float(np.max(rv))
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((xv - rv) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    t = np.arange(size) - half
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _local_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    tmp = ndimage.correlate1d(img, kernel, axis=0, mode="reflect")
    return ndimage.correlate1d(tmp, kernel, axis=1, mode="reflect")


def ssim(x, ref, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM over an 11x11 Gaussian window (sigma 1.5).

    The dynamic range is max(ref) - min(ref), so the measure is asymmetric
    unless both inputs share their range.
    """
    xv, rv = _values(x), _values(ref)
    if xv.shape != rv.shape:
        raise ValueError(f"shape mismatch {xv.shape} vs {rv.shape}")
    if xv.ndim == 3:
        return float(np.mean([ssim(xv[c], rv[c], k1, k2) for c in range(xv.shape[0])]))
    if xv.ndim != 2:
        raise ValueError("ssim expects 2-D images or (C, H, W) stacks")
    dynamic = float(rv.max() - rv.min())
    if dynamic == 0.0:
        if np.array_equal(xv, rv):
            return 1.0
        dynamic = max(float(xv.max() - xv.min()), 1e-30)
    c1 = (k1 * dynamic) ** 2
    c2 = (k2 * dynamic) ** 2
    kernel = _gaussian_kernel()
    mu_x = _local_mean(xv, kernel)
    mu_r = _local_mean(rv, kernel)
    var_x = _local_mean(xv * xv, kernel) - mu_x * mu_x
    var_r = _local_mean(rv * rv, kernel) - mu_r * mu_r
    cov = _local_mean(xv * rv, kernel) - mu_x * mu_r
    num = (2 * mu_x * mu_r + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_r * mu_r + c1) * (var_x + var_r + c2)
    return float(np.mean(num / den))


def cnr_snr(image, target: RoiSpec, background: RoiSpec) -> tuple[float, float]:
    """Contrast-to-noise and signal-to-noise from target/background ROIs."""
    img = _values(image)
    if img.ndim != 2:
        raise ValueError("cnr_snr expects a single 2-D image")
    t_vals = img[target.pixels]
    b_vals = img[background.pixels]
    if b_vals.size < 2:
        raise ValueError("background ROI needs at least 2 pixels")
    sigma_bg = float(np.std(b_vals, ddof=1))
    if sigma_bg == 0.0:
        raise ValueError("degenerate background ROI (zero deviation)")
    mu_t = float(np.mean(t_vals))
    mu_bg = float(np.mean(b_vals))
    return abs(mu_t - mu_bg) / sigma_bg, mu_t / sigma_bg


def lac_curve(stack: SpectralStack, roi: RoiSpec) -> np.ndarray:
    """Per-channel ROI mean: the effective LAC spectrum of a material."""
    vals = _values(stack)
    if vals.ndim != 3:
        raise ValueError("lac_curve expects a (C, H, W) stack")
    return np.array([float(np.mean(vals[c][roi.pixels])) for c in range(vals.shape[0])])


def channel_sum(stack) -> np.ndarray:
    return _values(stack).sum(axis=0)


def mip(stacks, axis: int = 0) -> np.ndarray:
    """Maximum intensity projection over a list of slices.

    Each entry is either a SpectralStack (summed over channels first) or an
    already channel-summed 2-D image; the result is the per-pixel maximum
    along the slice axis.
    """
    if len(stacks) == 0:
        raise ValueError("mip needs at least one slice")
    imgs = []
    for s in stacks:
        v = _values(s)
        imgs.append(v.sum(axis=0) if v.ndim == 3 else v)
    return np.max(np.stack(imgs, axis=axis), axis=axis)


def auto_rois(
    objects: list[PhantomObject],
    height: int,
    width: int,
    erode: int = 2,
) -> tuple[RoiSpec, RoiSpec]:
    """Target/background ROIs from phantom masks, eroded by `erode` pixels.

    Target: the largest object's mask; background: air inside the FOV disc,
    away from all objects.
    """
    if not objects:
        raise ValueError("need at least one object for a target ROI")
    masks = [object_mask(o, height, width) for o in objects]
    areas = [m.sum() for m in masks]
    target_mask = masks[int(np.argmax(areas))]
    # keep only the part of the target not overwritten by later objects
    order = int(np.argmax(areas))
    for later in masks[order + 1 :]:
        target_mask = target_mask & ~later
    target_mask = ndimage.binary_erosion(target_mask, iterations=erode)
    if not target_mask.any():
        raise ValueError("target ROI vanished after erosion")

    occupied = np.zeros((height, width), dtype=bool)
    for m in masks:
        occupied |= m
    air = fov_mask(height, width) & ~ndimage.binary_dilation(occupied, iterations=erode)
    air = ndimage.binary_erosion(air, iterations=erode)
    if not air.any():
        raise ValueError("background ROI vanished after erosion")
    return (
        RoiSpec("target", target_mask, "target"),
        RoiSpec("background", air, "background"),
    )


def evaluate_dataset(
    manifest: str | Path,
    methods: dict[str, list[SpectralStack]],
    out_dir: str | Path,
    rois: tuple[RoiSpec, RoiSpec] | None = None,
    roi_slice: int = 0,
    window: tuple[float, float] = DEFAULT_WINDOW,
) -> dict:
    """Metrics report over reconstruction methods for one dataset manifest.

    Writes summary.csv (per method/slice mean PSNR+SSIM), channelwise.csv,
    cnr_snr.csv (on `roi_slice`), lac curves per method and one MIP export
    per method.  Ground truth comes from the manifest's phantom stacks.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = load_manifest(manifest)
    truths = [read_stack(e["phantom_path"]) for e in entries]
    n = len(truths)
    for name, stacks in methods.items():
        if len(stacks) != n:
            raise ValueError(f"method {name!r} has {len(stacks)} stacks for {n} slices")

    report: dict = {"summary": [], "channelwise": [], "cnr_snr": [], "lac": {}}

    for name, stacks in sorted(methods.items()):
        for i, (rec, truth) in enumerate(zip(stacks, truths)):
            peak = float(np.max(truth.values))
            if peak <= 0:
                continue
            report["summary"].append(
                (name, i, psnr(rec, truth, peak), ssim(rec, truth))
            )
            for c in range(truth.channels):
                report["channelwise"].append(
                    (
                        name,
                        i,
                        c,
                        psnr(rec.values[c], truth.values[c], peak),
                        ssim(rec.values[c], truth.values[c]),
                    )
                )

    if rois is not None:
        target, background = rois
        for name, stacks in sorted(methods.items()):
            rec = stacks[roi_slice]
            per_channel = [
                cnr_snr(rec.values[c], target, background) for c in range(rec.channels)
            ]
            cnr = float(np.mean([p[0] for p in per_channel]))
            snr = float(np.mean([p[1] for p in per_channel]))
            report["cnr_snr"].append((name, cnr, snr))
            report["lac"][name] = lac_curve(rec, target)

    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "slice", "psnr", "ssim"])
        w.writerows(report["summary"])
    with open(out_dir / "channelwise.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "slice", "channel", "psnr", "ssim"])
        w.writerows(report["channelwise"])
    if report["cnr_snr"]:
        with open(out_dir / "cnr_snr.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "cnr", "snr"])
            w.writerows(report["cnr_snr"])
    if report["lac"]:
        with open(out_dir / "lac_curves.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method"] + [f"ch{c}" for c in range(len(next(iter(report['lac'].values()))))])
            for name, curve in sorted(report["lac"].items()):
                w.writerow([name] + [f"{v!r}" for v in curve])

    for name, stacks in sorted(methods.items()):
        export_pgm(mip(stacks), out_dir / f"mip_{name}.pgm", window=window)
    return report

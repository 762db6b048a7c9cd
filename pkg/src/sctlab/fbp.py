"""Filtered backprojection with a Ram-Lak / scaled-Hann filter family.

Filters are defined on normalized frequencies k in [0, 1] (1 = Nyquist of
the detector sampling):

    ram_lak: h(k) = k
    hann:    h(k) = k * cos(k*pi/(2*s))^2 for k < s, exactly 0 for k >= s

Row filtering happens in the frequency domain after zero-padding to the next
power of two >= 2*D, with the filter sampled on the padded grid so the Hann
cutoff lands exactly at k = s.

Reconstruction is weighted flat-detector fan-beam FBP: detector samples are
pre-weighted by SDD/sqrt(SDD^2 + u^2), rows are ramp-filtered at the virtual
(isocenter) sample spacing, and a pixel-driven backprojection applies the
inverse-square distance weight (SOD/l)^2 and the angular normalization
delta_angle / 2 for the full-circle scan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SinogramStack, SpectralStack, default_energies
from .geometry import FanGeometry
from .threads import parallel_channels

LOW_FREQ_SCALE = 0.2  # Hann scaling used for the Low2High input reconstructions
SUPERVISED_FREQ_SCALE = 0.6  # Hann scaling used for supervised-pipeline inputs


@dataclass(frozen=True)
class FilterSpec:
    """Reconstruction filter: kind and frequency scaling s in (0, 1]."""

    kind: str = "ram_lak"
    freq_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("ram_lak", "hann"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind == "ram_lak":
            object.__setattr__(self, "freq_scale", 1.0)
        s = self.freq_scale
        if not (0.0 < s <= 1.0):
            raise ValueError(f"freq_scale must lie in (0, 1], got {s}")


RAM_LAK = FilterSpec("ram_lak")
HANN_LOW = FilterSpec("hann", LOW_FREQ_SCALE)
HANN_SUPERVISED = FilterSpec("hann", SUPERVISED_FREQ_SCALE)


def filter_values(spec: FilterSpec, k: np.ndarray) -> np.ndarray:
    """Evaluate the filter transfer function at normalized frequencies k."""
    k = np.asarray(k, dtype=np.float64)
    if spec.kind == "ram_lak":
        return k.copy()
    s = spec.freq_scale
    return np.where(k >= s, 0.0, k * np.cos(k * math.pi / (2.0 * s)) ** 2)


def filter_weights(spec: FilterSpec, n: int) -> np.ndarray:
    """n filter samples at k_i = i/(n-1), i = 0..n-1."""
    if n < 2:
        raise ValueError("need at least 2 samples")
    return filter_values(spec, np.arange(n) / (n - 1))


def _padded_length(d: int) -> int:
    return 1 << max(1, int(math.ceil(math.log2(2 * d))))


def filter_sinogram(sino: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Convolve each detector row with the filter via FFT multiplication.

    Rows are zero-padded to the next power of two >= 2*D to suppress circular
    wrap-around; the output is cropped back to D samples.  Unit-spacing
    normalization: a pure frequency component comes back scaled by h(k).
    """
    s = np.asarray(sino, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError(f"expected (P, D) sinogram, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("sinogram contains non-finite values")
    d = s.shape[1]
    n_pad = _padded_length(d)
    k = np.fft.rfftfreq(n_pad) * 2.0  # normalized to [0, 1]
    weights = filter_values(spec, k)
    spectrum = np.fft.rfft(s, n=n_pad, axis=1) * weights[None, :]
    return np.fft.irfft(spectrum, n=n_pad, axis=1)[:, :d]


def _fbp_channel(sino: np.ndarray, geom: FanGeometry, spec: FilterSpec) -> np.ndarray:
    """Weighted FBP of one channel: (P, D) -> (H, W)."""
    u = geom.detector_coords()
    if geom.beam == "fan":
        sdd = geom.source_to_detector
        sod = geom.source_to_object
        cos_w = sdd / np.sqrt(sdd * sdd + u * u)
        ds_virtual = geom.detector_pixel * sod / sdd
    else:
        cos_w = np.ones_like(u)
        ds_virtual = geom.detector_pixel

    filtered = filter_sinogram(sino * cos_w[None, :], spec) / (2.0 * ds_virtual)

    x, y = geom.pixel_grid()
    recon = np.zeros(geom.image_size)
    d_angle = 2.0 * math.pi / geom.n_angles
    for p, phi in enumerate(geom.angles):
        cos_a, sin_a = math.cos(phi), math.sin(phi)
        if geom.beam == "fan":
            ell = sod - (x * cos_a + y * sin_a)
            ell = np.maximum(ell, 1e-9)
            u_hit = sdd * (-x * sin_a + y * cos_a) / ell
            weight = (sod / ell) ** 2
        else:
            u_hit = -x * sin_a + y * cos_a
            weight = 1.0
        vals = np.interp(u_hit, u, filtered[p], left=0.0, right=0.0)
        recon += weight * vals
    return recon * (d_angle / 2.0)


def fbp_reconstruct(sino: SinogramStack, spec: FilterSpec) -> SpectralStack:
    """Per-channel weighted FBP of a sinogram stack."""
    geom = sino.geometry
    out = np.empty((sino.channels, *geom.image_size))

    def recon_one(c: int) -> None:
        out[c] = _fbp_channel(sino.values[c], geom, spec)

    parallel_channels(recon_one, sino.channels)
    energies = sino.energies if sino.energies is not None else default_energies(sino.channels)
    return SpectralStack(out, energies, provenance=sino.provenance)


def make_low_high_pair(sino: SinogramStack) -> tuple[SpectralStack, SpectralStack]:
    """Training pair: low-pass (Hann s=0.2) and all-pass (Ram-Lak) FBPs."""
    x_lo = fbp_reconstruct(sino, HANN_LOW)
    x_hi = fbp_reconstruct(sino, RAM_LAK)
    return x_lo, x_hi

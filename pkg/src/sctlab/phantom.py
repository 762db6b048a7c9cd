"""Synthetic multi-energy phantom generation and fan-beam data simulation.

Slices contain 0..5 randomly sized, positioned and rotated ellipses or
rectangles, each carrying a spectral profile

    LAC(E) = amplitude * exp(-decay * Ehat),   Ehat = (E - E_min)/(E_max - E_min)

with amplitude ~ U(0, 0.03) 1/mm and decay ~ U(0, 10).  Objects are kept
inside the circular reconstruction domain; where objects overlap, the most
recently generated one wins.  Rendered mass outside the field-of-view disc
is cropped (the masking is a no-op for conforming objects).

All randomness uses numpy's Philox counter-based generator, which is
documented to produce identical streams across platforms; per-sample streams
are derived with a splitmix64-style hash of (seed, index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import SinogramStack, SpectralStack, default_energies, write_stack
from .geometry import FanGeometry
from .projector import project_stack

LAC_AMPLITUDE_MAX = 0.03  # 1/mm, aluminium-bar scale
LAC_DECAY_MAX = 10.0

_SALT_OBJECTS = 0x0B5EC7
_SALT_NOISE = 0x4015E


def _mix64(a: int, b: int) -> int:
    """splitmix64 finalizer over a*golden ^ b; portable seed derivation."""
    z = (a * 0x9E3779B97F4A7C15 + b) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=_mix64(int(seed), salt)))


@dataclass(frozen=True)
class PhantomObject:
    """One ellipse or rectangle in normalized domain units (unit disc)."""

    shape: str  # "ellipse" | "rectangle"
    center: tuple[float, float]
    half_axes: tuple[float, float]
    rotation: float
    lac_amplitude: float
    lac_decay: float

    def __post_init__(self) -> None:
        if self.shape not in ("ellipse", "rectangle"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if not (0.0 <= self.lac_amplitude <= LAC_AMPLITUDE_MAX):
            raise ValueError("lac_amplitude outside [0, 0.03]")
        if not (0.0 <= self.lac_decay <= LAC_DECAY_MAX):
            raise ValueError("lac_decay outside [0, 10]")
        cx, cy = self.center
        if math.hypot(cx, cy) + self.extent() > 1.0 + 1e-9:
            raise ValueError("object extends outside the unit reconstruction disc")

    def extent(self) -> float:
        """Circumradius of the object around its own center."""
        a, b = self.half_axes
        if self.shape == "ellipse":
            return max(a, b)
        return math.hypot(a, b)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-channel Gaussian noise with std = level * max(clean sinogram)."""

    kind: str = "gaussian_relative"
    level: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind != "gaussian_relative":
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.level < 0:
            raise ValueError("noise level must be >= 0")


def sample_phantom(rng_seed: int, max_objects: int = 5) -> list[PhantomObject]:
    """Draw 0..max_objects random objects, reproducibly from the seed."""
    rng = _rng(rng_seed, _SALT_OBJECTS)
    count = int(rng.integers(0, max_objects + 1))
    objects = []
    for _ in range(count):
        shape = "ellipse" if rng.random() < 0.5 else "rectangle"
        a = float(rng.uniform(0.08, 0.40))
        b = float(rng.uniform(0.08, 0.40))
        rotation = float(rng.uniform(0.0, math.pi))
        extent = max(a, b) if shape == "ellipse" else math.hypot(a, b)
        reach = max(1.0 - extent, 0.0)
        radius = reach * math.sqrt(rng.random())
        theta = rng.uniform(0.0, 2.0 * math.pi)
        center = (radius * math.cos(theta), radius * math.sin(theta))
        objects.append(
            PhantomObject(
                shape=shape,
                center=center,
                half_axes=(a, b),
                rotation=rotation,
                lac_amplitude=float(rng.uniform(0.0, LAC_AMPLITUDE_MAX)),
                lac_decay=float(rng.uniform(0.0, LAC_DECAY_MAX)),
            )
        )
    return objects


def object_mask(obj: PhantomObject, height: int, width: int) -> np.ndarray:
    """Boolean raster of the object on an H x W grid (unit disc = inscribed circle)."""
    scale = min(height, width) / 2.0
    xs = (np.arange(width) - (width - 1) / 2.0) / scale
    ys = ((height - 1) / 2.0 - np.arange(height)) / scale
    x = np.broadcast_to(xs, (height, width))
    y = np.broadcast_to(ys[:, None], (height, width))
    dx = x - obj.center[0]
    dy = y - obj.center[1]
    cos_r, sin_r = math.cos(obj.rotation), math.sin(obj.rotation)
    lx = cos_r * dx + sin_r * dy
    ly = -sin_r * dx + cos_r * dy
    a, b = obj.half_axes
    if obj.shape == "ellipse":
        return (lx / a) ** 2 + (ly / b) ** 2 <= 1.0
    return (np.abs(lx) <= a) & (np.abs(ly) <= b)


def fov_mask(height: int, width: int) -> np.ndarray:
    """Field-of-view disc: the circle inscribed in the image grid."""
    scale = min(height, width) / 2.0
    xs = (np.arange(width) - (width - 1) / 2.0) / scale
    ys = ((height - 1) / 2.0 - np.arange(height)) / scale
    return xs[None, :] ** 2 + ys[:, None] ** 2 <= 1.0


def render_spectral(
    objects: list[PhantomObject],
    energies: tuple[float, ...],
    height: int,
    width: int,
) -> SpectralStack:
    """Rasterize objects into a (C, H, W) LAC stack at the given energies."""
    energies = tuple(float(e) for e in energies)
    owner = np.full((height, width), -1, dtype=np.int64)
    for idx, obj in enumerate(objects):
        owner[object_mask(obj, height, width)] = idx

    amp = np.zeros((height, width))
    dec = np.zeros((height, width))
    for idx, obj in enumerate(objects):
        sel = owner == idx
        amp[sel] = obj.lac_amplitude
        dec[sel] = obj.lac_decay

    span = energies[-1] - energies[0]
    ehat = (
        np.zeros(len(energies))
        if span == 0
        else (np.asarray(energies) - energies[0]) / span
    )
    values = amp[None, :, :] * np.exp(-ehat[:, None, None] * dec[None, :, :])
    values *= fov_mask(height, width)[None, :, :]
    return SpectralStack(values, energies)


def simulate_sinogram(
    stack: SpectralStack, geom: FanGeometry, noise: NoiseSpec
) -> SinogramStack:
    """y = A x + delta with per-channel Gaussian noise scaled to the channel max."""
    clean = project_stack(stack, geom)
    if noise.level == 0.0:
        return clean
    rng = _rng(noise.seed, _SALT_NOISE)
    values = clean.values.copy()
    for c in range(values.shape[0]):
        sigma = noise.level * float(np.max(values[c]))
        values[c] += rng.normal(0.0, 1.0, size=values[c].shape) * sigma
    return SinogramStack(
        values,
        geom,
        energies=stack.energies,
        provenance=f"noise=gaussian_relative level={noise.level!r} seed={noise.seed}",
    )


def generate_dataset(
    count: int,
    seed: int,
    out_dir: str | Path,
    geom: FanGeometry,
    channels: int = 32,
    noise_level: float = 0.02,
    max_objects: int = 5,
    prefix: str = "sample",
) -> Path:
    """Write `count` (phantom, noisy sinogram) pairs plus a manifest.

    The manifest is UTF-8 CSV with lines `index,phantom_path,sinogram_path,seed`
    (paths relative to the manifest directory).  Regeneration with the same
    seed reproduces every payload byte.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    energies = default_energies(channels)
    h, w = geom.image_size
    lines = ["index,phantom_path,sinogram_path,seed"]
    for idx in range(count):
        sample_seed = _mix64(seed, idx)
        objects = sample_phantom(sample_seed, max_objects=max_objects)
        stack = render_spectral(objects, energies, h, w)
        sino = simulate_sinogram(
            stack, geom, NoiseSpec(level=noise_level, seed=_mix64(sample_seed, 1))
        )
        phantom_name = f"{prefix}_{idx:04d}_phantom.scts"
        sino_name = f"{prefix}_{idx:04d}_sino.scts"
        write_stack(stack, out_dir / phantom_name)
        write_stack(sino, out_dir / sino_name)
        lines.append(f"{idx},{phantom_name},{sino_name},{sample_seed}")
    manifest = out_dir / f"{prefix}_manifest.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def load_manifest(path: str | Path) -> list[dict[str, str]]:
    """Parse a dataset manifest into entries with absolute paths."""
    path = Path(path)
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines()[1:]:
        line = line.strip()
        if not line:
            continue
        idx, phantom, sino, seed = line.split(",")
        entries.append(
            {
                "index": idx,
                "phantom_path": str(path.parent / phantom),
                "sinogram_path": str(path.parent / sino),
                "seed": seed,
            }
        )
    return entries

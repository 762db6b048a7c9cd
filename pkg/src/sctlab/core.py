"""Spectral image/sinogram containers and the .scts binary stack format.

Values are held as float64 for all in-memory math; files store float32
little-endian payloads, so write -> read reproduces the float32 rounding of
the values bit-exactly.  Every stack is immutable after construction and can
be shared freely across workers.

File layout (little-endian):
    magic   4 bytes  b"SCTS"
    version u16      (currently 1)
    kind    u8       0 = image stack, 1 = sinogram stack
    dtype   u8       0 = float32 LE (only supported value)
    dims    3 x u32  (C, H, W) for images, (C, P, D) for sinograms
    payload C*H*W float32 LE, row-major, channel-major

A UTF-8 sidecar `<path>.meta` holds `key = value` lines: channel energies,
the acquisition geometry (for sinograms) and free-form provenance.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import FanGeometry

MAGIC = b"SCTS"
VERSION = 1
_KIND_IMAGE = 0
_KIND_SINOGRAM = 1

ENERGY_LO_KEV = 55.0
ENERGY_HI_KEV = 124.0


class StackFormatError(ValueError):
    """Raised for malformed .scts files (bad magic, truncation, NaN payload)."""


def default_energies(channels: int) -> tuple[float, ...]:
    """`channels` energies uniformly spaced over [55, 124] keV inclusive."""
    if channels < 1:
        raise ValueError("channels must be >= 1")
    if channels == 1:
        return (ENERGY_LO_KEV,)
    step = (ENERGY_HI_KEV - ENERGY_LO_KEV) / (channels - 1)
    return tuple(ENERGY_LO_KEV + step * i for i in range(channels))


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class SpectralStack:
    """C-channel 2-D image volume; values in effective LAC units (1/mm)."""

    values: np.ndarray  # (C, H, W) float64
    energies: tuple[float, ...]
    provenance: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"expected (C, H, W) values, got shape {v.shape}")
        _check_finite(v, "image stack")
        if len(self.energies) != v.shape[0]:
            raise ValueError(
                f"{len(self.energies)} energies for {v.shape[0]} channels"
            )
        e = tuple(float(x) for x in self.energies)
        if any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError("energies must be strictly increasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "energies", e)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class SinogramStack:
    """Per-channel linearized projection data (C, P, D), unitless."""

    values: np.ndarray  # (C, P, D) float64
    geometry: FanGeometry
    energies: tuple[float, ...] | None = None
    provenance: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"expected (C, P, D) values, got shape {v.shape}")
        _check_finite(v, "sinogram stack")
        if v.shape[1] != self.geometry.n_angles:
            raise ValueError(
                f"{v.shape[1]} angle rows vs {self.geometry.n_angles} geometry angles"
            )
        if v.shape[2] != self.geometry.detector_bins:
            raise ValueError(
                f"{v.shape[2]} detector bins vs geometry {self.geometry.detector_bins}"
            )
        if self.energies is not None:
            e = tuple(float(x) for x in self.energies)
            if len(e) != v.shape[0]:
                raise ValueError("energies length must match channel count")
            object.__setattr__(self, "energies", e)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_angles(self) -> int:
        return self.values.shape[1]

    @property
    def detector_bins(self) -> int:
        return self.values.shape[2]


Stack = SpectralStack | SinogramStack


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta")


def _write_sidecar(path: Path, items: list[tuple[str, str]]) -> None:
    lines = [f"{k} = {v}" for k, v in items]
    _sidecar_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_sidecar(path: Path) -> dict[str, str]:
    side = _sidecar_path(path)
    meta: dict[str, str] = {}
    if not side.exists():
        return meta
    for line in side.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def write_stack(stack: Stack, path: str | Path) -> None:
    """Serialize a stack to `path` (+ `<path>.meta` sidecar)."""
    if not str(path):
        raise ValueError("empty output path")
    path = Path(path)
    if not path.parent.exists():
        raise FileNotFoundError(f"parent directory {path.parent} does not exist")

    kind = _KIND_IMAGE if isinstance(stack, SpectralStack) else _KIND_SINOGRAM
    c, a, b = stack.values.shape
    if max(c, a, b) > 0xFFFFFFFF:
        raise ValueError("stack dimension overflows u32")
    header = MAGIC + struct.pack("<HBBIII", VERSION, kind, 0, c, a, b)
    payload = np.ascontiguousarray(stack.values, dtype="<f4").tobytes()
    path.write_bytes(header + payload)

    items: list[tuple[str, str]] = [("kind", "image" if kind == _KIND_IMAGE else "sinogram")]
    energies = stack.energies
    if energies is not None:
        items.append(("energies", ",".join(repr(e) for e in energies)))
    if isinstance(stack, SinogramStack):
        items.extend(stack.geometry.sidecar_items())
    if stack.provenance:
        items.append(("provenance", stack.provenance))
    _write_sidecar(path, items)


def read_stack(path: str | Path) -> Stack:
    """Parse a .scts file written by `write_stack`."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 17:
        raise StackFormatError(f"{path}: file shorter than header")
    if raw[:4] != MAGIC:
        raise StackFormatError(f"{path}: bad magic {raw[:4]!r}")
    version, kind, dtype, c, a, b = struct.unpack("<HBBIII", raw[4:17])
    if version != VERSION:
        raise StackFormatError(f"{path}: unsupported version {version}")
    if dtype != 0:
        raise StackFormatError(f"{path}: unsupported dtype code {dtype}")
    n = c * a * b
    payload = raw[17:]
    if len(payload) < 4 * n:
        raise StackFormatError(
            f"{path}: payload truncated ({len(payload)} bytes, expected {4 * n})"
        )
    values = np.frombuffer(payload[: 4 * n], dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise StackFormatError(f"{path}: payload contains non-finite values")
    values = values.reshape(c, a, b)

    meta = _read_sidecar(path)
    energies: tuple[float, ...] | None = None
    if "energies" in meta:
        energies = tuple(float(x) for x in meta["energies"].split(","))
    provenance = meta.get("provenance", "")

    if kind == _KIND_IMAGE:
        if energies is None:
            energies = default_energies(c)
        return SpectralStack(values, energies, provenance=provenance)
    if kind == _KIND_SINOGRAM:
        if "source_to_object" not in meta:
            raise StackFormatError(f"{path}: sinogram sidecar lacks geometry")
        geom = FanGeometry.from_sidecar(meta)
        return SinogramStack(values, geom, energies=energies, provenance=provenance)
    raise StackFormatError(f"{path}: unknown stack kind {kind}")


def normalize_stack(stack: Stack, mode: str = "global_max") -> tuple[Stack, float]:
    """Rescale so max|value| is 1 (mode='global_max') or pass through ('none').

    Returns (stack', scale) with stack == scale * stack'.
    """
    if mode == "none":
        return stack, 1.0
    if mode != "global_max":
        raise ValueError(f"unknown normalization mode {mode!r}")
    scale = float(np.max(np.abs(stack.values)))
    if scale == 0.0:
        raise ValueError("cannot global_max-normalize an all-zero stack")
    scaled = stack.values / scale
    if isinstance(stack, SpectralStack):
        return SpectralStack(scaled, stack.energies, provenance=stack.provenance), scale
    return (
        SinogramStack(scaled, stack.geometry, energies=stack.energies,
                      provenance=stack.provenance),
        scale,
    )


def export_pgm(image: np.ndarray, path: str | Path,
               window: tuple[float, float] | None = None) -> None:
    """8-bit PGM export of a single 2-D image, min-max windowed by default."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("export_pgm expects a single 2-D image")
    lo, hi = window if window is not None else (float(img.min()), float(img.max()))
    if hi <= lo:
        hi = lo + 1.0
    scaled = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    data = (scaled * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def export_png(image: np.ndarray, path: str | Path,
               window: tuple[float, float] | None = None) -> None:
    """PNG export of a single channel; requires Pillow."""
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise RuntimeError("PNG export needs Pillow; use export_pgm instead") from exc
    img = np.asarray(image, dtype=np.float64)
    lo, hi = window if window is not None else (float(img.min()), float(img.max()))
    if hi <= lo:
        hi = lo + 1.0
    scaled = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    Image.fromarray((scaled * 255.0 + 0.5).astype(np.uint8), mode="L").save(str(path))

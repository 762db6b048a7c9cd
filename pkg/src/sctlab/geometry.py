"""Fan-beam acquisition geometry.

A geometry fixes the source/detector distances, the flat detector layout,
the projection angles and the reconstruction grid.  All lengths are in mm,
angles in radians.  The projection operator and the FBP weights are derived
from these fields alone, so two equal geometries are interchangeable.

Coordinate conventions (shared by the projector and FBP):
  * world origin = rotation center; x to the right, y up
  * pixel (i, j) center at x = (j - (W-1)/2) * pixel_size,
    y = ((H-1)/2 - i) * pixel_size  (row 0 is the top row)
  * source at angle phi sits at source_to_object * (cos phi, sin phi)
  * detector bin centers at u_i = (i - (D-1)/2) * detector_pixel along the
    axis (-sin phi, cos phi); the central ray hits the detector midpoint
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi

# MUSIC table-top scanner values: source-detector / source-object distances,
# 256 detector pixels of 0.77 mm, 37 projections.
MUSIC_SDD = 115.55
MUSIC_SOD = 57.50
MUSIC_DETECTOR_BINS = 256
MUSIC_DETECTOR_PIXEL = 0.77
MUSIC_N_ANGLES = 37


@dataclass(frozen=True)
class FanGeometry:
    """Flat-detector fan-beam geometry (parallel-beam toggle for sanity tests)."""

    source_to_object: float
    source_to_detector: float
    detector_bins: int
    detector_pixel: float
    angles: tuple[float, ...]
    image_size: tuple[int, int]  # (H, W)
    pixel_size: float
    beam: str = "fan"  # "fan" | "parallel"

    def __post_init__(self) -> None:
        if self.beam not in ("fan", "parallel"):
            raise ValueError(f"unknown beam kind {self.beam!r}")
        if self.beam == "fan" and not (
            self.source_to_detector > self.source_to_object > 0
        ):
            raise ValueError(
                "need source_to_detector > source_to_object > 0, got "
                f"{self.source_to_detector} / {self.source_to_object}"
            )
        if self.detector_bins < 1:
            raise ValueError("detector_bins must be >= 1")
        if self.detector_pixel <= 0:
            raise ValueError("detector_pixel must be positive")
        if len(self.angles) < 1:
            raise ValueError("need at least one projection angle")
        for a in self.angles:
            if not (0.0 <= a < TWO_PI):
                raise ValueError(f"angle {a} outside [0, 2*pi)")
        h, w = self.image_size
        if h < 1 or w < 1:
            raise ValueError("image_size entries must be >= 1")
        if self.pixel_size <= 0:
            raise ValueError("pixel_size must be positive")
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        object.__setattr__(self, "image_size", (int(h), int(w)))

    @property
    def n_angles(self) -> int:
        return len(self.angles)

    @property
    def magnification(self) -> float:
        if self.beam == "parallel":
            return 1.0
        return self.source_to_detector / self.source_to_object

    @property
    def fov_diameter(self) -> float:
        """Detector extent backscaled to the rotation center."""
        return self.detector_bins * self.detector_pixel / self.magnification

    def detector_coords(self) -> np.ndarray:
        """Centers u_i of the detector bins (mm, centered on the midline)."""
        d = self.detector_bins
        return (np.arange(d) - (d - 1) / 2.0) * self.detector_pixel

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """World (x, y) coordinates of all pixel centers, each (H, W)."""
        h, w = self.image_size
        xs = (np.arange(w) - (w - 1) / 2.0) * self.pixel_size
        ys = ((h - 1) / 2.0 - np.arange(h)) * self.pixel_size
        return np.broadcast_to(xs, (h, w)).copy(), np.broadcast_to(
            ys[:, None], (h, w)
        ).copy()

    def sidecar_items(self) -> list[tuple[str, str]]:
        return [
            ("beam", self.beam),
            ("source_to_object", repr(self.source_to_object)),
            ("source_to_detector", repr(self.source_to_detector)),
            ("detector_bins", str(self.detector_bins)),
            ("detector_pixel", repr(self.detector_pixel)),
            ("pixel_size", repr(self.pixel_size)),
            ("image_height", str(self.image_size[0])),
            ("image_width", str(self.image_size[1])),
            ("angles", ",".join(repr(a) for a in self.angles)),
        ]

    @staticmethod
    def from_sidecar(meta: dict[str, str]) -> "FanGeometry":
        return FanGeometry(
            source_to_object=float(meta["source_to_object"]),
            source_to_detector=float(meta["source_to_detector"]),
            detector_bins=int(meta["detector_bins"]),
            detector_pixel=float(meta["detector_pixel"]),
            angles=tuple(float(a) for a in meta["angles"].split(",")),
            image_size=(int(meta["image_height"]), int(meta["image_width"])),
            pixel_size=float(meta["pixel_size"]),
            beam=meta.get("beam", "fan"),
        )

    def with_angles(self, n: int) -> "FanGeometry":
        return replace(self, angles=uniform_angles(n))


def uniform_angles(n: int, full_circle: bool = True) -> tuple[float, ...]:
    """n angles uniformly covering [0, 2*pi) (or [0, pi) for short scans)."""
    span = TWO_PI if full_circle else math.pi
    return tuple(span * i / n for i in range(n))


def music_geometry(
    image_size: int | tuple[int, int] = 256,
    n_angles: int = MUSIC_N_ANGLES,
    detector_bins: int = MUSIC_DETECTOR_BINS,
    detector_pixel: float = MUSIC_DETECTOR_PIXEL,
) -> FanGeometry:
    """MUSIC scanner geometry with the grid scaled to cover the full FOV.

    The pixel size is chosen so that min(H, W) pixels span the detector FOV
    backprojected to the rotation center; at 256x256 this gives ~0.383 mm.
    """
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    magnification = MUSIC_SDD / MUSIC_SOD
    fov = detector_bins * detector_pixel / magnification
    pixel = fov / min(image_size)
    return FanGeometry(
        source_to_object=MUSIC_SOD,
        source_to_detector=MUSIC_SDD,
        detector_bins=detector_bins,
        detector_pixel=detector_pixel,
        angles=uniform_angles(n_angles),
        image_size=image_size,
        pixel_size=pixel,
        beam="fan",
    )

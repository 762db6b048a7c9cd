"""Discrete fan-beam projector A, matched adjoint A*, and a dense oracle.

The forward operator is a Joseph-style ray-driven discretization: each ray
is sampled at equidistant points (step = pixel_size / 2) between its entry
and exit of the circle circumscribing the image grid, every sample reads the
image by bilinear interpolation, and the line integral is the sample sum
times the step length.  The whole discretization is assembled once per
geometry into a scipy CSR matrix, so back_project is the exact algebraic
transpose of forward_project and adjoint tests hold to float64 round-off.

Rays that miss the image grid produce exactly zero rows; bilinear taps that
fall outside the grid are dropped (zero padding semantics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .core import SinogramStack, SpectralStack, default_energies
from .geometry import FanGeometry

DENSE_GUARD = 4096


@dataclass(frozen=True)
class DenseOperator:
    """Explicit (P*D) x (H*W) matrix, built column-wise from basis images."""

    matrix: np.ndarray
    geometry: FanGeometry


def _ray_origins_dirs(geom: FanGeometry, angle: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-detector-bin ray origin points and unit directions for one view."""
    u = geom.detector_coords()
    d = geom.detector_bins
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    axis = np.array([-sin_a, cos_a])
    if geom.beam == "parallel":
        origins = u[:, None] * axis[None, :]
        dirs = np.broadcast_to(np.array([-cos_a, -sin_a]), (d, 2)).copy()
        return origins, dirs
    source = np.array([cos_a, sin_a]) * geom.source_to_object
    det_center = source - np.array([cos_a, sin_a]) * geom.source_to_detector
    targets = det_center[None, :] + u[:, None] * axis[None, :]
    dirs = targets - source[None, :]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(source, (d, 2)).copy()
    return origins, dirs


def _angle_entries(
    geom: FanGeometry, angle_index: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """COO triplets (rows, cols, vals) for all rays of one projection angle."""
    h, w = geom.image_size
    px = geom.pixel_size
    step = 0.5 * px
    radius = 0.5 * math.hypot(w * px, h * px)

    origins, dirs = _ray_origins_dirs(geom, geom.angles[angle_index])
    d = geom.detector_bins

    # Clip each ray to the circle circumscribing the grid: |o + t v|^2 = R^2.
    b = np.einsum("ij,ij->i", origins, dirs)
    c = np.einsum("ij,ij->i", origins, origins) - radius * radius
    disc = b * b - c
    hit = disc > 0.0
    sqrt_disc = np.sqrt(np.maximum(disc, 0.0))
    t0 = -b - sqrt_disc

    n_samples = max(int(math.ceil(2.0 * radius / step)), 1)
    t = t0[:, None] + (np.arange(n_samples) + 0.5) * step
    pts_x = origins[:, 0:1] + t * dirs[:, 0:1]
    pts_y = origins[:, 1:2] + t * dirs[:, 1:2]

    # World -> fractional pixel index (row 0 on top, y axis up).
    jf = pts_x / px + (w - 1) / 2.0
    if_ = (h - 1) / 2.0 - pts_y / px
    j0 = np.floor(jf).astype(np.int64)
    i0 = np.floor(if_).astype(np.int64)
    fj = jf - j0
    fi = if_ - i0

    rows_out, cols_out, vals_out = [], [], []
    ray_ids = np.broadcast_to(np.arange(d)[:, None], t.shape)
    for di, dj, wgt in (
        (0, 0, (1 - fi) * (1 - fj)),
        (0, 1, (1 - fi) * fj),
        (1, 0, fi * (1 - fj)),
        (1, 1, fi * fj),
    ):
        ii = i0 + di
        jj = j0 + dj
        ok = (
            hit[:, None]
            & (ii >= 0)
            & (ii < h)
            & (jj >= 0)
            & (jj < w)
            & (wgt > 0.0)
        )
        rows_out.append(angle_index * d + ray_ids[ok])
        cols_out.append(ii[ok] * w + jj[ok])
        vals_out.append(wgt[ok] * step)
    return (
        np.concatenate(rows_out),
        np.concatenate(cols_out),
        np.concatenate(vals_out),
    )


@lru_cache(maxsize=8)
def _system_matrix(geom: FanGeometry) -> sp.csr_matrix:
    h, w = geom.image_size
    p, d = geom.n_angles, geom.detector_bins
    blocks = []
    for k in range(p):
        rows, cols, vals = _angle_entries(geom, k)
        blocks.append(
            sp.coo_matrix((vals, (rows - k * d, cols)), shape=(d, h * w)).tocsr()
        )
    return sp.vstack(blocks, format="csr")


@lru_cache(maxsize=8)
def _system_matrix_t(geom: FanGeometry) -> sp.csr_matrix:
    return _system_matrix(geom).T.tocsr()


def forward_project(image: np.ndarray, geom: FanGeometry) -> np.ndarray:
    """Project a single-channel (H, W) image to a (P, D) sinogram."""
    h, w = geom.image_size
    img = np.asarray(image, dtype=np.float64)
    if img.shape != (h, w):
        raise ValueError(f"image shape {img.shape} does not match geometry {(h, w)}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    out = _system_matrix(geom) @ img.ravel()
    return out.reshape(geom.n_angles, geom.detector_bins)


def back_project(sino: np.ndarray, geom: FanGeometry) -> np.ndarray:
    """Exact algebraic transpose of forward_project: (P, D) -> (H, W)."""
    p, d = geom.n_angles, geom.detector_bins
    s = np.asarray(sino, dtype=np.float64)
    if s.shape != (p, d):
        raise ValueError(f"sinogram shape {s.shape} does not match geometry {(p, d)}")
    if not np.all(np.isfinite(s)):
        raise ValueError("sinogram contains non-finite values")
    out = _system_matrix_t(geom) @ s.ravel()
    return out.reshape(geom.image_size)


def build_dense_matrix(geom: FanGeometry) -> DenseOperator:
    """Dense verification oracle: column j = forward projection of basis image j."""
    h, w = geom.image_size
    p, d = geom.n_angles, geom.detector_bins
    if h * w > DENSE_GUARD or p * d > DENSE_GUARD:
        raise ValueError(
            f"dense oracle limited to {DENSE_GUARD} rows/cols, "
            f"got image {h * w} and sinogram {p * d}"
        )
    cols = []
    basis = np.zeros((h, w))
    for j in range(h * w):
        basis.flat[j] = 1.0
        cols.append(forward_project(basis, geom).ravel())
        basis.flat[j] = 0.0
    return DenseOperator(np.column_stack(cols), geom)


def _project_values(values: np.ndarray, geom: FanGeometry) -> np.ndarray:
    """(C, H, W) -> (C, P, D) by one sparse matmul over all channels."""
    c = values.shape[0]
    mat = _system_matrix(geom)
    flat = values.reshape(c, -1).T
    out = mat @ flat
    return np.ascontiguousarray(out.T).reshape(c, geom.n_angles, geom.detector_bins)


def _back_project_values(values: np.ndarray, geom: FanGeometry) -> np.ndarray:
    """(C, P, D) -> (C, H, W), transpose of _project_values per channel."""
    c = values.shape[0]
    mat = _system_matrix_t(geom)
    flat = values.reshape(c, -1).T
    out = mat @ flat
    return np.ascontiguousarray(out.T).reshape(c, *geom.image_size)


def project_stack(stack: SpectralStack, geom: FanGeometry) -> SinogramStack:
    """Channel-wise forward projection of a spectral image stack."""
    if stack.values.shape[1:] != geom.image_size:
        raise ValueError("stack image size does not match geometry")
    return SinogramStack(
        _project_values(stack.values, geom),
        geom,
        energies=stack.energies,
        provenance=stack.provenance,
    )


def back_project_stack(sino: SinogramStack, geom: FanGeometry | None = None) -> SpectralStack:
    """Channel-wise adjoint projection of a sinogram stack."""
    geom = geom if geom is not None else sino.geometry
    values = _back_project_values(sino.values, geom)
    energies = sino.energies if sino.energies is not None else default_energies(sino.channels)
    return SpectralStack(values, energies, provenance=sino.provenance)


def adjoint_gap(geom: FanGeometry, n_pairs: int = 100, seed: int = 0) -> float:
    """max over random pairs of |<Ax,y> - <x,A*y>| / (|Ax||y| + eps)."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    h, w = geom.image_size
    p, d = geom.n_angles, geom.detector_bins
    worst = 0.0
    for _ in range(n_pairs):
        x = rng.standard_normal((h, w))
        y = rng.standard_normal((p, d))
        ax = forward_project(x, geom)
        aty = back_project(y, geom)
        lhs = float(np.vdot(ax, y))
        rhs = float(np.vdot(x, aty))
        denom = np.linalg.norm(ax) * np.linalg.norm(y) + 1e-30
        worst = max(worst, abs(lhs - rhs) / denom)
    return worst


def operator_norm(geom: FanGeometry, n_iter: int = 20, seed: int = 7) -> float:
    """Largest singular value of A estimated with `n_iter` power iterations."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    mat = _system_matrix(geom)
    mat_t = _system_matrix_t(geom)
    x = rng.standard_normal(mat.shape[1])
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(n_iter):
        y = mat_t @ (mat @ x)
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0
        x = y / norm
        sigma = math.sqrt(norm)
    return sigma

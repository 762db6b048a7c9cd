"""Total nuclear variation: spectral Jacobian, nuclear norm, prox, gradient.

The penalty couples spectral channels through the per-pixel C x 2 Jacobian
M(i, j) of forward differences (horizontal, vertical) and sums the nuclear
norm (l1 of singular values) over all pixels.

Per-pixel singular values come from the 2 x 2 Gram matrix G = M^T M: the
large eigenvalue is mean + half-gap, the small one det(G)/lambda_max (the
product form avoids the cancellation of mean - half-gap for near-rank-1
pixels).  Spectral functions of M needed by the prox and the smoothed
gradient have the form M f(G); since G is 2 x 2, f(G) = c0 I + c1 G with
(c0, c1) interpolating f at the two eigenvalues, so everything vectorizes
over pixels without any SVD.
"""

from __future__ import annotations

import math

import numpy as np

from .core import SpectralStack

_EIG_GUARD = 1e-12  # singular directions below this are treated as zero


def _as_values(stack) -> np.ndarray:
    if isinstance(stack, SpectralStack):
        return stack.values
    arr = np.asarray(stack, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected (C, H, W) values, got shape {arr.shape}")
    return arr


def spectral_jacobian(stack) -> np.ndarray:
    """Forward differences with Neumann boundary: (C, H, W) -> (H, W, C, 2).

    field[..., 0] is the horizontal difference x(i, j+1) - x(i, j) (zero in
    the last column), field[..., 1] the vertical one (zero in the last row).
    """
    x = _as_values(stack)
    c, h, w = x.shape
    field = np.zeros((h, w, c, 2))
    dx = x[:, :, 1:] - x[:, :, :-1]
    dy = x[:, 1:, :] - x[:, :-1, :]
    field[:, :-1, :, 0] = np.moveaxis(dx, 0, -1)
    field[:-1, :, :, 1] = np.moveaxis(dy, 0, -1)
    return field


def jacobian_adjoint(field: np.ndarray) -> np.ndarray:
    """Exact transpose of spectral_jacobian: (H, W, C, 2) -> (C, H, W)."""
    f = np.asarray(field, dtype=np.float64)
    h, w, c, two = f.shape
    if two != 2:
        raise ValueError("Jacobian field must have a trailing axis of size 2")
    fx = np.moveaxis(f[..., 0], -1, 0)
    fy = np.moveaxis(f[..., 1], -1, 0)
    out = np.zeros((c, h, w))
    out[:, :, :-1] -= fx[:, :, :-1]
    out[:, :, 1:] += fx[:, :, :-1]
    out[:, :-1, :] -= fy[:, :-1, :]
    out[:, 1:, :] += fy[:, :-1, :]
    return out


def _gram(field: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entries (a, b, c) of G = M^T M per pixel; each (H, W)."""
    gx = field[..., 0]
    gy = field[..., 1]
    a = np.einsum("hwc,hwc->hw", gx, gx)
    b = np.einsum("hwc,hwc->hw", gx, gy)
    c = np.einsum("hwc,hwc->hw", gy, gy)
    return a, b, c


def _gram_eigvals(a, b, c, rank1: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues of the 2 x 2 Gram matrix, largest first, both >= 0.

    rank1=True states that M has a single row (C = 1), where the small
    eigenvalue is identically zero and the large one is the trace.
    """
    if rank1:
        lam1 = a + c
        return lam1, np.zeros_like(lam1)
    mean = 0.5 * (a + c)
    half_gap = np.sqrt(np.maximum((0.5 * (a - c)) ** 2 + b * b, 0.0))
    lam1 = mean + half_gap
    det = a * c - b * b
    lam2 = np.where(lam1 > 0.0, np.maximum(det, 0.0) / np.where(lam1 > 0.0, lam1, 1.0), 0.0)
    return lam1, np.minimum(lam2, lam1)


def _field_eigvals(field: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _gram_eigvals(*_gram(field), rank1=field.shape[2] < 2)


def _singular_values(field: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lam1, lam2 = _field_eigvals(field)
    return np.sqrt(lam1), np.sqrt(lam2)


def _apply_spectral(field: np.ndarray, lam1, lam2, f1, f2, fprime_mid) -> np.ndarray:
    """M -> M f(G) with f(G) = c0 I + c1 G, interpolating (lam_i, f_i).

    Near-coincident eigenvalues switch to the tangent line at the midpoint
    using the supplied derivative values.
    """
    gap = lam1 - lam2
    scale = np.maximum(lam1, 1.0)
    degenerate = gap <= 1e-9 * scale
    safe_gap = np.where(degenerate, 1.0, gap)
    c1 = np.where(degenerate, fprime_mid, (f1 - f2) / safe_gap)
    c0 = np.where(degenerate, f1 - fprime_mid * lam1, f1 - c1 * lam1)

    a, b, c = _gram(field)
    gx = field[..., 0]
    gy = field[..., 1]
    out = np.empty_like(field)
    out[..., 0] = c0[..., None] * gx + c1[..., None] * (a[..., None] * gx + b[..., None] * gy)
    out[..., 1] = c0[..., None] * gy + c1[..., None] * (b[..., None] * gx + c[..., None] * gy)
    return out


def nuclear_norm_pixel(matrix: np.ndarray) -> float:
    """Sum of the (<= 2) singular values of one C x 2 matrix."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != 2:
        raise ValueError(f"expected (C, 2) matrix, got shape {m.shape}")
    s1, s2 = _singular_values(m[None, None])
    return float(s1[0, 0] + s2[0, 0])


def tnv_value(stack) -> float:
    """Total nuclear variation: sum over pixels of the Jacobian nuclear norm."""
    s1, s2 = _singular_values(spectral_jacobian(stack))
    return float(np.sum(s1) + np.sum(s2))


def tnv_prox(field: np.ndarray, threshold: float) -> np.ndarray:
    """Per-pixel singular value soft-thresholding U max(S - t, 0) V^T."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    f = np.asarray(field, dtype=np.float64)
    if threshold == 0.0:
        return f.copy()
    lam1, lam2 = _field_eigvals(f)

    def ratio(lam):
        s = np.sqrt(lam)
        return np.where(s > threshold, 1.0 - threshold / np.where(s > 0, s, 1.0), 0.0)

    # d/dlam of max(1 - t/sqrt(lam), 0) at the midpoint, for degenerate pixels
    mid = 0.5 * (lam1 + lam2)
    s_mid = np.sqrt(np.maximum(mid, _EIG_GUARD**2))
    deriv = np.where(s_mid > threshold, 0.5 * threshold / s_mid**3, 0.0)
    return _apply_spectral(f, lam1, lam2, ratio(lam1), ratio(lam2), deriv)


def tnv_grad(stack, eps: float = 1e-8) -> tuple[np.ndarray, float]:
    """Smoothed TNV value sum_i sqrt(sigma_i^2 + eps^2) and its gradient.

    Returns (gradient with the stack's (C, H, W) layout, value).  The
    gradient is J^T applied to the per-pixel field M V diag(1/sqrt(
    sigma_i^2 + eps^2)) V^T and matches central finite differences.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = _as_values(stack)
    field = spectral_jacobian(x)
    lam1, lam2 = _field_eigvals(field)
    e2 = eps * eps
    value = float(np.sum(np.sqrt(lam1 + e2)) + np.sum(np.sqrt(lam2 + e2)))

    f1 = 1.0 / np.sqrt(lam1 + e2)
    f2 = 1.0 / np.sqrt(lam2 + e2)
    mid = 0.5 * (lam1 + lam2)
    deriv = -0.5 * (mid + e2) ** (-1.5)
    grad_field = _apply_spectral(field, lam1, lam2, f1, f2, deriv)
    return jacobian_adjoint(grad_field), value

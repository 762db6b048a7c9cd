"""Training losses: squared-l2 supervised and Low2High with TNV coupling."""

from __future__ import annotations

import numpy as np

from ..tnv import tnv_grad
from .unet import UNetModel, unet_backward, unet_forward


def loss_supervised(
    model: UNetModel, x_in: np.ndarray, x_ref: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """||net(x_in) - x_ref||^2 and its parameter gradients."""
    if x_in.shape != x_ref.shape:
        raise ValueError(f"shape mismatch {x_in.shape} vs {x_ref.shape}")
    out, tape = unet_forward(model, x_in)
    residual = out - x_ref.astype(out.dtype, copy=False)
    value = float(np.sum(residual * residual))
    grads = unet_backward(model, tape, 2.0 * residual)
    return value, grads


def loss_low2high(
    model: UNetModel,
    x_lo: np.ndarray,
    x_hi: np.ndarray,
    lam: float,
    tnv_eps: float = 1e-8,
) -> tuple[float, dict[str, np.ndarray], float, float]:
    """||net(x_lo) - x_hi||^2 + lam * smoothed TNV of the network output.

    Returns (value, gradients, data_term, tnv_term); lam = 0 reduces to the
    supervised loss with x_hi as reference.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if x_lo.shape != x_hi.shape:
        raise ValueError(f"shape mismatch {x_lo.shape} vs {x_hi.shape}")
    out, tape = unet_forward(model, x_lo)
    residual = out - x_hi.astype(out.dtype, copy=False)
    data_term = float(np.sum(residual * residual))
    grad_out = 2.0 * residual
    tnv_term = 0.0
    if lam > 0.0:
        tnv_gradient, tnv_val = tnv_grad(out.astype(np.float64), eps=tnv_eps)
        tnv_term = lam * tnv_val
        grad_out = grad_out + lam * tnv_gradient.astype(out.dtype)
    grads = unet_backward(model, tape, grad_out)
    return data_term + tnv_term, grads, data_term, tnv_term

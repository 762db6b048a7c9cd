"""Differentiable primitives for the residual UNet.

Each primitive is a pair of functions: `*_forward(...) -> (out, cache)` and
`*_backward(grad_out, cache) -> input gradients`.  All primitives operate on
(C, H, W) arrays, preserve the input dtype (float32 for training, float64
for gradient checking) and are deterministic.

Convolutions use replicate padding (avoids dark reconstruction borders) and
are evaluated as nine shifted GEMMs over the padded input, which keeps peak
memory low and routes all heavy work through BLAS.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# 3x3 convolution, replicate padding
# ---------------------------------------------------------------------------

def _pad_replicate(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="edge")


def _fold_replicate_pad(grad_padded: np.ndarray) -> np.ndarray:
    """Adjoint of replicate padding: border gradients fold onto edge pixels."""
    g = grad_padded[:, 1:-1, 1:-1].copy()
    g[:, 0, :] += grad_padded[:, 0, 1:-1]
    g[:, -1, :] += grad_padded[:, -1, 1:-1]
    g[:, :, 0] += grad_padded[:, 1:-1, 0]
    g[:, :, -1] += grad_padded[:, 1:-1, -1]
    g[:, 0, 0] += grad_padded[:, 0, 0]
    g[:, 0, -1] += grad_padded[:, 0, -1]
    g[:, -1, 0] += grad_padded[:, -1, 0]
    g[:, -1, -1] += grad_padded[:, -1, -1]
    return g


def _im2col(xp: np.ndarray, h: int, width: int) -> np.ndarray:
    """Padded (Cin, H+2, W+2) -> column matrix (Cin*9, H*W)."""
    cin = xp.shape[0]
    col = np.empty((cin, 9, h * width), dtype=xp.dtype)
    for di in range(3):
        for dj in range(3):
            col[:, di * 3 + dj, :] = xp[:, di : di + h, dj : dj + width].reshape(
                cin, -1
            )
    return col.reshape(cin * 9, h * width)


def conv3x3_forward(
    x: np.ndarray, w: np.ndarray, b: np.ndarray
) -> tuple[np.ndarray, tuple]:
    """x: (Cin, H, W), w: (Cout, Cin, 3, 3), b: (Cout,) -> (Cout, H, W)."""
    cin, h, width = x.shape
    cout = w.shape[0]
    col = _im2col(_pad_replicate(x), h, width)
    y = w.reshape(cout, cin * 9) @ col + b[:, None]
    return y.reshape(cout, h, width), (col, w, x.shape)


def conv3x3_backward(grad: np.ndarray, cache: tuple):
    col, w, x_shape = cache
    cin, h, width = x_shape
    cout = w.shape[0]
    g2 = np.ascontiguousarray(grad).reshape(cout, -1)
    grad_w = (g2 @ col.T).reshape(w.shape)
    grad_b = g2.sum(axis=1)

    grad_col = (w.reshape(cout, cin * 9).T @ g2).reshape(cin, 9, h, width)
    grad_xp = np.zeros((cin, h + 2, width + 2), dtype=grad.dtype)
    for di in range(3):
        for dj in range(3):
            grad_xp[:, di : di + h, dj : dj + width] += grad_col[:, di * 3 + dj]
    return _fold_replicate_pad(grad_xp), grad_w, grad_b


# ---------------------------------------------------------------------------
# 1x1 convolution
# ---------------------------------------------------------------------------

def conv1x1_forward(x, w, b):
    """x: (Cin, H, W), w: (Cout, Cin), b: (Cout,)."""
    cin, h, width = x.shape
    y = w @ x.reshape(cin, -1) + b[:, None]
    return y.reshape(w.shape[0], h, width), (x, w)


def conv1x1_backward(grad, cache):
    x, w = cache
    cin, h, width = x.shape
    g2 = grad.reshape(grad.shape[0], -1)
    x2 = x.reshape(cin, -1)
    grad_w = g2 @ x2.T
    grad_b = g2.sum(axis=1)
    grad_x = (w.T @ g2).reshape(x.shape)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# Group normalization with a single group (layer-norm over C, H, W)
# ---------------------------------------------------------------------------

GN_EPS = 1e-5


def group_norm_forward(x, gamma, beta, eps: float = GN_EPS):
    """Normalize over all of (C, H, W), then per-channel scale and shift."""
    mu = x.mean(dtype=x.dtype)
    var = x.var(dtype=x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    y = gamma[:, None, None] * xhat + beta[:, None, None]
    return y, (xhat, inv, gamma)


def group_norm_backward(grad, cache):
    xhat, inv, gamma = cache
    n = xhat.size
    grad_xhat = grad * gamma[:, None, None]
    mean_g = grad_xhat.mean(dtype=grad.dtype)
    mean_gx = (grad_xhat * xhat).mean(dtype=grad.dtype)
    grad_x = inv * (grad_xhat - mean_g - xhat * mean_gx)
    grad_gamma = (grad * xhat).sum(axis=(1, 2))
    grad_beta = grad.sum(axis=(1, 2))
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad, mask):
    return grad * mask


# ---------------------------------------------------------------------------
# 2x2 max pooling (stride 2); ties resolve to the first position
# ---------------------------------------------------------------------------

def maxpool2_forward(x):
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("maxpool2 needs even spatial dims")
    blocks = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4)
    flat = blocks.reshape(c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=3)
    out = np.take_along_axis(flat, idx[..., None], axis=3)[..., 0]
    return out, (idx, x.shape)


def maxpool2_backward(grad, cache):
    idx, x_shape = cache
    c, h, w = x_shape
    flat = np.zeros((c, h // 2, w // 2, 4), dtype=grad.dtype)
    np.put_along_axis(flat, idx[..., None], grad[..., None], axis=3)
    blocks = flat.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4)
    return blocks.reshape(c, h, w)


# ---------------------------------------------------------------------------
# 2x nearest-neighbor upsampling
# ---------------------------------------------------------------------------

def upsample2_forward(x):
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2), x.shape


def upsample2_backward(grad, x_shape):
    c, h, w = x_shape
    return grad.reshape(c, h, 2, w, 2).sum(axis=(2, 4))


# ---------------------------------------------------------------------------
# Channel concatenation and residual add
# ---------------------------------------------------------------------------

def concat_forward(a, b):
    return np.concatenate([a, b], axis=0), a.shape[0]


def concat_backward(grad, split):
    return grad[:split], grad[split:]


def add_forward(a, b):
    return a + b, None


def add_backward(grad, _cache):
    return grad, grad

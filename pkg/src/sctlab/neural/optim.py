"""Adam with the standard bias correction and a cosine-annealing schedule.

The learning rate is stepped once per epoch: lr(t) = lr0 * (1 + cos(pi*t/T))/2
with T the total number of epochs, so training starts at lr0 and anneals to 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .unet import UNetModel


def cosine_lr(lr0: float, epoch: int, total_epochs: int) -> float:
    t = min(max(epoch, 0), total_epochs)
    return lr0 * (1.0 + math.cos(math.pi * t / total_epochs)) / 2.0


@dataclass
class AdamState:
    lr0: float
    total_epochs: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    lr: float = field(init=False)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.lr = self.lr0

    def set_epoch(self, epoch: int) -> None:
        self.lr = cosine_lr(self.lr0, epoch, self.total_epochs)


def adam_step(
    state: AdamState, model: UNetModel, grads: dict[str, np.ndarray]
) -> tuple[UNetModel, AdamState]:
    """One bias-corrected Adam update, in place on the model parameters."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in model.params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype)
    return model, state

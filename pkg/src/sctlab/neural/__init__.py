"""Residual UNet denoiser with hand-rolled reverse-mode differentiation."""

from .losses import loss_low2high, loss_supervised
from .optim import AdamState, adam_step, cosine_lr
from .unet import (
    UNetConfig,
    UNetModel,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
    unet_apply,
    unet_backward,
    unet_forward,
    unet_init,
    unet_residual,
)

__all__ = [
    "AdamState",
    "UNetConfig",
    "UNetModel",
    "adam_step",
    "cosine_lr",
    "load_checkpoint",
    "loss_low2high",
    "loss_supervised",
    "parameter_count",
    "save_checkpoint",
    "unet_apply",
    "unet_backward",
    "unet_forward",
    "unet_init",
    "unet_residual",
]

"""Residual UNet denoiser with explicit forward/backward passes.

Architecture (depth scales, widths base*2^k): per encoder scale two
3x3 conv + GN + ReLU blocks, 2x2 max-pool between scales; decoder scales use
nearest-neighbor upsampling followed by a 3x3 conv + GN + ReLU, skip
concatenation, then two conv blocks; a final 1x1 convolution produces the
residual correction added to the input.  The final convolution is
zero-initialized so a fresh network is exactly the identity map, which keeps
early residual training stable.

Parameters live in an ordered name -> ndarray dict; float32 for training,
float64 models are built for gradient checks.  Checkpoints use the .sctm
binary format defined at the bottom.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops

CKPT_MAGIC = b"SCTM"
CKPT_VERSION = 1


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 4
    depth: int = 4
    base_width: int = 32

    def __post_init__(self) -> None:
        if self.in_channels not in (1, 4):
            raise ValueError("in_channels must be 1 or 4")
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.base_width < 8:
            raise ValueError("base_width must be >= 8")

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(self.base_width * (1 << k) for k in range(self.depth))

    @property
    def spatial_multiple(self) -> int:
        return 1 << (self.depth - 1)


@dataclass
class UNetModel:
    config: UNetConfig
    params: dict[str, np.ndarray]
    seed: int = 0
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "UNetModel":
        return UNetModel(
            self.config,
            {k: v.astype(dtype) for k, v in self.params.items()},
            self.seed,
            dict(self.meta),
        )

    def copy(self) -> "UNetModel":
        return UNetModel(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            self.seed,
            dict(self.meta),
        )


def _conv_block_names(prefix: str) -> list[str]:
    return [
        f"{prefix}.w", f"{prefix}.b", f"{prefix}.gn_gamma", f"{prefix}.gn_beta",
    ]


def parameter_spec(config: UNetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list defining the full parameter set."""
    widths = config.widths
    spec: list[tuple[str, tuple[int, ...]]] = []

    def conv_block(prefix: str, cin: int, cout: int) -> None:
        spec.append((f"{prefix}.w", (cout, cin, 3, 3)))
        spec.append((f"{prefix}.b", (cout,)))
        spec.append((f"{prefix}.gn_gamma", (cout,)))
        spec.append((f"{prefix}.gn_beta", (cout,)))

    cin = config.in_channels
    for k in range(config.depth - 1):
        conv_block(f"enc{k}.block1", cin, widths[k])
        conv_block(f"enc{k}.block2", widths[k], widths[k])
        cin = widths[k]
    conv_block("bot.block1", cin, widths[-1])
    conv_block("bot.block2", widths[-1], widths[-1])
    for k in range(config.depth - 2, -1, -1):
        conv_block(f"dec{k}.up", widths[k + 1], widths[k])
        conv_block(f"dec{k}.block1", 2 * widths[k], widths[k])
        conv_block(f"dec{k}.block2", widths[k], widths[k])
    spec.append(("final.w", (config.in_channels, widths[0])))
    spec.append(("final.b", (config.in_channels,)))
    return spec


def parameter_count(config: UNetConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in parameter_spec(config))


def unet_init(config: UNetConfig, seed: int = 0, dtype=np.float32) -> UNetModel:
    """He fan-in Gaussian kernels, unit norm scales, zero shifts and biases.

    The final 1x1 convolution is zero-initialized so the residual network
    starts as the identity.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_spec(config):
        if name.endswith(".w") and name != "final.w":
            fan_in = int(np.prod(shape[1:]))
            params[name] = (
                rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            ).astype(dtype)
        elif name.endswith(".gn_gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        else:  # biases, gn_beta, final.w
            params[name] = np.zeros(shape, dtype=dtype)
    return UNetModel(config, params, seed)


def _pad_to_multiple(x: np.ndarray, multiple: int) -> tuple[np.ndarray, tuple[int, int]]:
    _, h, w = x.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return x, (h, w)


def _conv_block_forward(params, prefix, x, caches):
    y, c1 = ops.conv3x3_forward(x, params[f"{prefix}.w"], params[f"{prefix}.b"])
    y, c2 = ops.group_norm_forward(
        y, params[f"{prefix}.gn_gamma"], params[f"{prefix}.gn_beta"]
    )
    y, c3 = ops.relu_forward(y)
    caches.append(("conv", (prefix, c1, c2, c3)))
    return y


def _conv_block_backward(params, cache, grad, grads):
    prefix, c1, c2, c3 = cache
    grad = ops.relu_backward(grad, c3)
    grad, g_gamma, g_beta = ops.group_norm_backward(grad, c2)
    grad, g_w, g_b = ops.conv3x3_backward(grad, c1)
    grads[f"{prefix}.gn_gamma"] += g_gamma
    grads[f"{prefix}.gn_beta"] += g_beta
    grads[f"{prefix}.w"] += g_w
    grads[f"{prefix}.b"] += g_b
    return grad


def unet_forward(model: UNetModel, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Full forward pass returning (output, tape) for a later backward."""
    cfg = model.config
    params = model.params
    if x.ndim != 3 or x.shape[0] != cfg.in_channels:
        raise ValueError(
            f"expected ({cfg.in_channels}, H, W) input, got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("network input contains non-finite values")
    x = x.astype(model.dtype, copy=False)

    tape: list = []
    xp, orig_hw = _pad_to_multiple(x, cfg.spatial_multiple)
    tape.append(("input", (xp.shape, orig_hw)))

    skips = []
    h = xp
    for k in range(cfg.depth - 1):
        h = _conv_block_forward(params, f"enc{k}.block1", h, tape)
        h = _conv_block_forward(params, f"enc{k}.block2", h, tape)
        skips.append(h)
        h, cp = ops.maxpool2_forward(h)
        tape.append(("pool", cp))
    h = _conv_block_forward(params, "bot.block1", h, tape)
    h = _conv_block_forward(params, "bot.block2", h, tape)
    for k in range(cfg.depth - 2, -1, -1):
        h, cu = ops.upsample2_forward(h)
        tape.append(("up", cu))
        h = _conv_block_forward(params, f"dec{k}.up", h, tape)
        h, csplit = ops.concat_forward(skips[k], h)
        tape.append(("concat", csplit))
        h = _conv_block_forward(params, f"dec{k}.block1", h, tape)
        h = _conv_block_forward(params, f"dec{k}.block2", h, tape)
    corr, cf = ops.conv1x1_forward(h, params["final.w"], params["final.b"])
    tape.append(("final", cf))

    ph, pw = orig_hw
    out = xp + corr
    return out[:, :ph, :pw], tape


def unet_backward(
    model: UNetModel, tape: list, grad_out: np.ndarray
) -> dict[str, np.ndarray]:
    """Reverse pass: gradient of <grad_out, output> w.r.t. all parameters.

    The gradient through the padded input (residual branch) is discarded; the
    returned dict covers parameters only.
    """
    cfg = model.config
    params = model.params
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}

    it = iter(reversed(tape))
    kind, cf = next(it)
    assert kind == "final"
    pad_shape, (ph, pw) = tape[0][1]
    g = np.zeros(pad_shape, dtype=grad_out.dtype)
    g[:, :ph, :pw] = grad_out

    g_corr, g_w, g_b = ops.conv1x1_backward(g, cf)
    grads["final.w"] += g_w
    grads["final.b"] += g_b
    g = g_corr

    skip_grads: list[np.ndarray | None] = [None] * (cfg.depth - 1)
    for k in range(0, cfg.depth - 1):
        kind, cache = next(it)
        g = _conv_block_backward(params, cache, g, grads)  # dec{k}.block2
        kind, cache = next(it)
        g = _conv_block_backward(params, cache, g, grads)  # dec{k}.block1
        kind, csplit = next(it)
        assert kind == "concat"
        g_skip, g = ops.concat_backward(g, csplit)
        skip_grads[k] = g_skip
        kind, cache = next(it)
        g = _conv_block_backward(params, cache, g, grads)  # dec{k}.up
        kind, cu = next(it)
        assert kind == "up"
        g = ops.upsample2_backward(g, cu)

    kind, cache = next(it)
    g = _conv_block_backward(params, cache, g, grads)  # bot.block2
    kind, cache = next(it)
    g = _conv_block_backward(params, cache, g, grads)  # bot.block1

    for k in range(cfg.depth - 2, -1, -1):
        kind, cp = next(it)
        assert kind == "pool"
        g = ops.maxpool2_backward(g, cp)
        g = g + skip_grads[k]
        kind, cache = next(it)
        g = _conv_block_backward(params, cache, g, grads)  # enc{k}.block2
        kind, cache = next(it)
        g = _conv_block_backward(params, cache, g, grads)  # enc{k}.block1
    return grads


def unet_apply(model: UNetModel, x: np.ndarray) -> np.ndarray:
    """Denoised output x + correction; shape-preserving."""
    out, _ = unet_forward(model, x)
    return out


def unet_residual(model: UNetModel, x: np.ndarray) -> np.ndarray:
    """Just the correction term (output - input), exact zero at init."""
    out, _ = unet_forward(model, x)
    return out - x.astype(out.dtype, copy=False)


# ---------------------------------------------------------------------------
# Checkpoint format: magic, version, metadata block, named float32 tensors
# ---------------------------------------------------------------------------

def save_checkpoint(model: UNetModel, path: str | Path, extra_meta: dict[str, str] | None = None) -> None:
    meta = {
        "in_channels": str(model.config.in_channels),
        "depth": str(model.config.depth),
        "base_width": str(model.config.base_width),
        "seed": str(model.seed),
    }
    meta.update(model.meta)
    if extra_meta:
        meta.update(extra_meta)
    meta_block = "\n".join(f"{k} = {v}" for k, v in sorted(meta.items())).encode("utf-8")

    chunks = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(meta_block)), meta_block]
    chunks.append(struct.pack("<I", len(model.params)))
    for name, tensor in model.params.items():
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> UNetModel:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    version, meta_len = struct.unpack("<HI", raw[4:10])
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    meta: dict[str, str] = {}
    for line in raw[pos : pos + meta_len].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    pos += meta_len
    (n_tensors,) = struct.unpack("<I", raw[pos : pos + 4])
    pos += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", raw[pos : pos + 2])
        pos += 2
        name = raw[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack("<B", raw[pos : pos + 1])
        pos += 1
        shape = struct.unpack(f"<{ndim}I", raw[pos : pos + 4 * ndim])
        pos += 4 * ndim
        count = int(np.prod(shape))
        tensor = np.frombuffer(raw[pos : pos + 4 * count], dtype="<f4")
        pos += 4 * count
        params[name] = tensor.reshape(shape).astype(np.float32)
    config = UNetConfig(
        in_channels=int(meta.pop("in_channels")),
        depth=int(meta.pop("depth")),
        base_width=int(meta.pop("base_width")),
    )
    seed = int(meta.pop("seed", "0"))
    return UNetModel(config, params, seed, meta)

"""Attention-guided generator (depth view -> occupancy probabilities) and the
conditional critic (depth view + grid -> unbounded realism score).

Both networks are 5x5/stride-2 convolution stacks built from the autograd
engine. The generator's final stride-1 1x1 layer emits grid_size channels that
are read directly as the z axis of the output cube, so the 2D stack produces a
3D grid. The critic mirrors the encoder on the (1 + grid_size)-channel
depth/grid concatenation and scores with the mean of its bottleneck vector; no
output squashing, since the Wasserstein objective needs an unconstrained critic.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .autograd import (
    Tensor, concat_channels, conv2d, global_max_pool, leaky_relu, mul_channel,
    mul_spatial, reshape, sigmoid, softmax, tmean, transpose_conv2d,
)
from .errors import ShapeMismatchError
from .geometry import DepthView, VoxelGrid

__all__ = [
    "ModelConfig", "LayerSpec", "NetworkParams", "preset_config", "PRESET_NAMES",
    "generator_plan", "critic_plan", "attention_plan",
    "build_generator", "build_critic",
    "generator_forward", "critic_forward",
    "spatial_attention", "spatial_attention_map",
    "channel_attention", "channel_attention_map",
]

KERNEL = 5
STRIDE = 2
PAD = KERNEL // 2      # keeps stride-2 layers halving exactly
OUT_PAD = STRIDE - 1   # keeps transpose layers doubling exactly


@dataclass
class ModelConfig:
    view_size: int
    grid_size: int
    encoder_channels: list
    decoder_channels: list
    leaky_slope: float = 0.2
    attention_enabled: bool = True
    # initial logit of the output layer; a negative prior (e.g. the occupancy
    # equilibrium of the loss weights) starts training near the sparse regime
    # instead of forcing an all-0.5 grid through a transient
    output_bias: float = 0.0
    preset: str = "custom"

    def __post_init__(self):
        v = self.view_size
        if v != self.grid_size:
            raise ValueError("view_size and grid_size must match")
        if v < 8 or v & (v - 1):
            raise ValueError(f"view_size must be a power of two >= 8, got {v}")
        depth = v.bit_length() - 1
        if len(self.encoder_channels) != depth:
            raise ValueError(
                f"need {depth} encoder channels for view {v} (bottleneck must be 1x1), "
                f"got {len(self.encoder_channels)}")
        if len(self.decoder_channels) != depth:
            raise ValueError(
                f"need {depth} decoder channels for view {v}, got {len(self.decoder_channels)}")
        if self.encoder_channels[0] % 8:
            raise ValueError("first encoder channel count must be divisible by 8 "
                             "(spatial attention reduction)")
        if self.decoder_channels[-1] % 4:
            raise ValueError("last decoder channel count must be divisible by 4 "
                             "(channel attention reduction)")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0,1)")

    @property
    def depth(self):
        return self.view_size.bit_length() - 1


_PRESETS = {
    # seven encoder counts: the stated six with the last repeated, matching the
    # critic's 512-wide bottleneck; decoder counts kept in printed order
    "paper": dict(view_size=128,
                  encoder_channels=[64, 128, 256, 256, 512, 512, 512],
                  decoder_channels=[32, 32, 64, 64, 128, 128, 256]),
    "desk": dict(view_size=32,
                 encoder_channels=[16, 32, 64, 64, 128],
                 decoder_channels=[16, 16, 32, 32, 64],
                 output_bias=-1.8),
}

PRESET_NAMES = tuple(_PRESETS)


def preset_config(name, attention_enabled=True):
    if name not in _PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
    spec = _PRESETS[name]
    return ModelConfig(view_size=spec["view_size"], grid_size=spec["view_size"],
                       encoder_channels=list(spec["encoder_channels"]),
                       decoder_channels=list(spec["decoder_channels"]),
                       attention_enabled=attention_enabled,
                       output_bias=spec.get("output_bias", 0.0), preset=name)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # "conv" | "tconv"
    in_ch: int
    out_ch: int
    kernel: int = KERNEL
    stride: int = STRIDE
    pad: int = PAD
    out_pad: int = 0

    @property
    def kernel_shape(self):
        if self.kind == "conv":
            return (self.out_ch, self.in_ch, self.kernel, self.kernel)
        return (self.in_ch, self.out_ch, self.kernel, self.kernel)


def generator_plan(config):
    """Encoder/decoder layer shapes; skip connections concatenate the encoder
    output at each spatial resolution onto the decoder input at the same one."""
    enc = config.encoder_channels
    dec = config.decoder_channels
    depth = config.depth
    specs = []
    in_ch = 1
    for i, ch in enumerate(enc):
        specs.append(LayerSpec(f"enc{i + 1}", "conv", in_ch, ch))
        in_ch = ch
    for i, ch in enumerate(dec):
        src = enc[-1] if i == 0 else dec[i - 1] + enc[depth - 1 - i]
        specs.append(LayerSpec(f"dec{i + 1}", "tconv", src, ch, out_pad=OUT_PAD))
    specs.append(LayerSpec("out", "conv", dec[-1], config.grid_size,
                           kernel=1, stride=1, pad=0))
    return specs


def attention_plan(config):
    """1x1 convolution shapes for the two attention modules."""
    c_sa = config.encoder_channels[0]
    c_ca = config.decoder_channels[-1]
    return [
        LayerSpec("sa.cv1", "conv", c_sa, c_sa // 8, kernel=1, stride=1, pad=0),
        LayerSpec("sa.cv2", "conv", c_sa // 8, 1, kernel=1, stride=1, pad=0),
        LayerSpec("ca.cv1", "conv", c_ca, c_ca // 4, kernel=1, stride=1, pad=0),
        LayerSpec("ca.cv2", "conv", c_ca // 4, c_ca, kernel=1, stride=1, pad=0),
    ]


def critic_plan(config):
    specs = []
    in_ch = 1 + config.grid_size
    for i, ch in enumerate(config.encoder_channels):
        specs.append(LayerSpec(f"enc{i + 1}", "conv", in_ch, ch))
        in_ch = ch
    return specs


class NetworkParams:
    """Ordered named parameter tensors for one network."""

    def __init__(self, tensors):
        self._tensors = dict(tensors)

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def count(self):
        return sum(t.data.size for t in self._tensors.values())

    def constants(self):
        """Same storage wrapped without gradient tracking (for frozen passes)."""
        return NetworkParams({n: t.detach() for n, t in self._tensors.items()})

    def zero_grads(self):
        for t in self._tensors.values():
            t.grad = None

    def grads(self):
        return {n: t.grad for n, t in self._tensors.items()}

    def snapshot(self):
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def restore(self, snap):
        for n, t in self._tensors.items():
            t.data = snap[n].copy()


def _layer_rng(seed, name):
    # per-layer substream so the same seed yields identical tensors for the
    # layers two configs share (e.g. ablation models with/without attention)
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _init_layers(specs, seed, dtype):
    tensors = {}
    for spec in specs:
        rng = _layer_rng(seed, spec.name)
        std = math.sqrt(2.0 / (spec.in_ch * spec.kernel * spec.kernel))
        kernel = rng.normal(0.0, std, spec.kernel_shape).astype(dtype)
        tensors[spec.name + ".kernel"] = Tensor(kernel, requires_grad=True)
        tensors[spec.name + ".bias"] = Tensor(np.zeros(spec.out_ch, dtype=dtype),
                                              requires_grad=True)
    return tensors


def build_generator(config, seed, dtype=np.float32):
    """Gaussian std sqrt(2/fan_in) kernels, zero biases (except the configured
    output prior logit), deterministic in seed."""
    specs = list(generator_plan(config))
    if config.attention_enabled:
        specs += attention_plan(config)
    params = NetworkParams(_init_layers(specs, seed, dtype))
    if config.output_bias:
        params["out.bias"].data = np.full_like(params["out.bias"].data,
                                               config.output_bias)
    return params


def build_critic(config, seed, dtype=np.float32):
    return NetworkParams(_init_layers(critic_plan(config), seed, dtype))


# ---------------------------------------------------------------------------
# attention modules

def spatial_attention_map(f, w1, b1, w2, b2):
    """Softmax-normalized position weighting (1,H,W) from low-level features."""
    c, h, w = f.data.shape
    if c % 8:
        raise ShapeMismatchError(f"spatial attention needs channels divisible by 8, got {c}")
    logits = conv2d(conv2d(f, w1, b1, stride=1, pad=0), w2, b2, stride=1, pad=0)
    flat = softmax(reshape(logits, (1, h * w)), axis=1)
    return reshape(flat, (1, h, w))


def spatial_attention(f, w1, b1, w2, b2):
    """Weight every channel plane of f by the spatial map."""
    return mul_spatial(f, spatial_attention_map(f, w1, b1, w2, b2))


def channel_attention_map(f, w1, b1, w2, b2):
    """Softmax-normalized channel weighting (C,1,1) from max-pooled features."""
    c = f.data.shape[0]
    if c % 4:
        raise ShapeMismatchError(f"channel attention needs channels divisible by 4, got {c}")
    pooled = reshape(global_max_pool(f), (c, 1, 1))
    logits = conv2d(conv2d(pooled, w1, b1, stride=1, pad=0), w2, b2, stride=1, pad=0)
    return softmax(logits, axis=0)


def channel_attention(f, w1, b1, w2, b2):
    return mul_channel(f, channel_attention_map(f, w1, b1, w2, b2))


# ---------------------------------------------------------------------------
# forward passes

def _as_depth_tensor(depth, view_size):
    if isinstance(depth, Tensor):
        t = depth
    else:
        values = depth.values if isinstance(depth, DepthView) else np.asarray(depth)
        if values.ndim == 2:
            values = values[None]
        t = Tensor(values)
    if t.data.shape != (1, view_size, view_size):
        raise ShapeMismatchError(
            f"depth input shape {t.data.shape} does not match view size {view_size}")
    return t


def _as_grid_tensor(grid, grid_size):
    if isinstance(grid, Tensor):
        t = grid
    else:
        values = grid.values if isinstance(grid, VoxelGrid) else np.asarray(grid)
        t = Tensor(values)
    if t.data.shape != (grid_size,) * 3:
        raise ShapeMismatchError(
            f"grid input shape {t.data.shape} does not match grid size {grid_size}")
    return t


def generator_forward(params, config, depth):
    """Depth view (1,H,W) -> probabilistic occupancy grid (n,n,n), values in (0,1).

    Spatial attention follows the first encoder activation (and its attended
    output is what the skip connection forwards); channel attention follows the
    last 5x5 transpose layer, before the final 1x1 projection and sigmoid.
    """
    x = _as_depth_tensor(depth, config.view_size)
    slope = config.leaky_slope
    depth_n = config.depth

    skips = []
    h = x
    for i in range(depth_n):
        h = leaky_relu(conv2d(h, params[f"enc{i + 1}.kernel"], params[f"enc{i + 1}.bias"],
                              stride=STRIDE, pad=PAD), slope)
        if i == 0 and config.attention_enabled:
            h = spatial_attention(h, params["sa.cv1.kernel"], params["sa.cv1.bias"],
                                  params["sa.cv2.kernel"], params["sa.cv2.bias"])
        skips.append(h)

    h = skips[-1]
    for i in range(depth_n):
        h = leaky_relu(
            transpose_conv2d(h, params[f"dec{i + 1}.kernel"], params[f"dec{i + 1}.bias"],
                             stride=STRIDE, pad=PAD, out_pad=OUT_PAD), slope)
        if i < depth_n - 1:
            h = concat_channels(h, skips[depth_n - 2 - i])
    if config.attention_enabled:
        h = channel_attention(h, params["ca.cv1.kernel"], params["ca.cv1.bias"],
                              params["ca.cv2.kernel"], params["ca.cv2.bias"])
    out = sigmoid(conv2d(h, params["out.kernel"], params["out.bias"], stride=1, pad=0))
    return out  # channel axis is the grid's z axis


def critic_forward(params, config, depth, grid):
    """(depth view, voxel grid) -> scalar score; mean of the bottleneck vector."""
    d = _as_depth_tensor(depth, config.view_size)
    g = _as_grid_tensor(grid, config.grid_size)
    h = concat_channels(d, g)
    for i in range(config.depth):
        h = leaky_relu(conv2d(h, params[f"enc{i + 1}.kernel"], params[f"enc{i + 1}.bias"],
                              stride=STRIDE, pad=PAD), config.leaky_slope)
    return tmean(h)

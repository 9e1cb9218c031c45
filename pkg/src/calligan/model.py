"""Generator and discriminator assembly.

The generator is an encoder-decoder with skip links.  The encoder stacks
``depth`` Convolution-BatchNorm-ReLU blocks (5x5 kernels, stride 2) that halve
the spatial size down to a 1x1 latent; the decoder mirrors it with
Deconvolution-BatchNorm-ReLU blocks and one final deconvolution+sigmoid output
layer carrying no batchnorm.  Decoder block j concatenates the output of
encoder block depth-j+1 onto its input (the 1x1 bottleneck gets no skip), so
fine stroke geometry can bypass the bottleneck.

The discriminator sees the 2-channel concatenation of the condition glyph and
a candidate glyph, applies ``disc_blocks`` stride-2 CBR blocks, and maps the
flattened features through one fully-connected layer to a per-item probability
that the candidate is the genuine target.  A patch-output variant swaps the
fully-connected head for a 1-channel convolution, yielding a grid of local
verdicts instead of a scalar.

Every parameter shape is a pure function of ArchConfig, so a checkpoint can
be validated structurally before any value is read.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import ConfigError, DimensionError
from .optim import init_params
from .tensor import (
    Tensor,
    batchnorm,
    concat_channels,
    conv2d,
    conv_transpose2d,
    fully_connected,
    leaky_relu,
    sigmoid,
)

__all__ = [
    "ArchConfig",
    "NetParams",
    "ModelParams",
    "build_generator",
    "build_discriminator",
    "generator_forward",
    "discriminator_forward",
    "generator_shapes",
    "discriminator_shapes",
    "generator_buffer_shapes",
    "discriminator_buffer_shapes",
    "count_params",
]

# generator outputs are probabilities and must stay strictly inside (0, 1)
# even at float32, where a saturated sigmoid rounds to exactly 0.0 or 1.0
_PROB_EPS = 1e-7

_BN_EPS = 1e-5


@dataclass(frozen=True)
class ArchConfig:
    """Structural knobs shared by the generator and discriminator.

    depth is derived: log2(image_size) encoder blocks take the image to a
    1x1 latent.  Channel counts double per block from base_channels up to
    the max_channels cap.
    """

    image_size: int = 256
    base_channels: int = 64
    max_channels: int = 512
    filter_size: int = 5
    stride: int = 2
    disc_blocks: int = 4
    relu_slope: float = 0.0
    patch_output: bool = False
    in_channels: int = 1

    def __post_init__(self):
        s = self.image_size
        if s < 4 or s & (s - 1) != 0:
            raise ConfigError(f"image_size must be a power of two >= 4, got {s}")
        if self.base_channels < 1 or self.max_channels < self.base_channels:
            raise ConfigError(
                f"need 1 <= base_channels <= max_channels, got "
                f"{self.base_channels}/{self.max_channels}")
        if self.filter_size < 3 or self.filter_size % 2 == 0:
            raise ConfigError(f"filter_size must be odd and >= 3, got {self.filter_size}")
        if self.stride != 2:
            raise ConfigError(
                f"stride must be 2 (the halving ladder depends on it), got {self.stride}")
        if self.disc_blocks < 1:
            raise ConfigError(f"disc_blocks must be >= 1, got {self.disc_blocks}")
        if not 0.0 <= self.relu_slope < 1.0:
            raise ConfigError(f"relu_slope must be in [0, 1), got {self.relu_slope}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")

    @property
    def depth(self) -> int:
        return self.image_size.bit_length() - 1

    @property
    def padding(self) -> int:
        return (self.filter_size - 1) // 2

    def channels(self, block: int) -> int:
        """Output channels of encoder block `block` (1-based)."""
        return min(self.base_channels * 2 ** (block - 1), self.max_channels)

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "base_channels": self.base_channels,
            "max_channels": self.max_channels,
            "filter_size": self.filter_size,
            "stride": self.stride,
            "disc_blocks": self.disc_blocks,
            "relu_slope": self.relu_slope,
            "patch_output": self.patch_output,
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**d)


@dataclass
class NetParams:
    """Trainable tensors plus batchnorm running buffers for one network."""

    params: Dict[str, Tensor]
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ModelParams:
    arch: ArchConfig
    generator: NetParams
    discriminator: NetParams


# -- shape derivation ---------------------------------------------------------


def generator_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    k = arch.filter_size
    n = arch.depth
    shapes: dict[str, tuple[int, ...]] = {}
    prev = arch.in_channels
    for i in range(1, n + 1):
        c = arch.channels(i)
        shapes[f"enc{i}.conv.w"] = (c, prev, k, k)
        shapes[f"enc{i}.conv.b"] = (c,)
        shapes[f"enc{i}.bn.gamma"] = (c,)
        shapes[f"enc{i}.bn.beta"] = (c,)
        prev = c
    for j in range(1, n):
        out_c = arch.channels(n - j)
        if j == 1:
            in_c = arch.channels(n)  # bottleneck, no skip
        else:
            in_c = 2 * arch.channels(n - j + 1)  # previous decoder + mirrored encoder
        shapes[f"dec{j}.conv.w"] = (in_c, out_c, k, k)
        shapes[f"dec{j}.conv.b"] = (out_c,)
        shapes[f"dec{j}.bn.gamma"] = (out_c,)
        shapes[f"dec{j}.bn.beta"] = (out_c,)
    shapes["out.conv.w"] = (2 * arch.channels(1), arch.in_channels, k, k)
    shapes["out.conv.b"] = (arch.in_channels,)
    return shapes


def generator_buffer_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    n = arch.depth
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(1, n + 1):
        c = arch.channels(i)
        shapes[f"enc{i}.bn.mean"] = (c,)
        shapes[f"enc{i}.bn.var"] = (c,)
    for j in range(1, n):
        c = arch.channels(n - j)
        shapes[f"dec{j}.bn.mean"] = (c,)
        shapes[f"dec{j}.bn.var"] = (c,)
    return shapes


def _disc_spatial(arch: ArchConfig) -> int:
    size = arch.image_size
    for _ in range(arch.disc_blocks):
        if size < 2:
            raise ConfigError(
                f"image_size {arch.image_size} is too small for {arch.disc_blocks} "
                "stride-2 discriminator blocks")
        size //= 2
    return size


def discriminator_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    k = arch.filter_size
    shapes: dict[str, tuple[int, ...]] = {}
    prev = 2 * arch.in_channels  # condition + candidate
    for i in range(1, arch.disc_blocks + 1):
        c = arch.channels(i)
        shapes[f"blk{i}.conv.w"] = (c, prev, k, k)
        shapes[f"blk{i}.conv.b"] = (c,)
        shapes[f"blk{i}.bn.gamma"] = (c,)
        shapes[f"blk{i}.bn.beta"] = (c,)
        prev = c
    if arch.patch_output:
        shapes["head.conv.w"] = (1, prev, k, k)
        shapes["head.conv.b"] = (1,)
    else:
        spatial = _disc_spatial(arch)
        shapes["head.fc.w"] = (prev * spatial * spatial, 1)
        shapes["head.fc.b"] = (1,)
    return shapes


def discriminator_buffer_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(1, arch.disc_blocks + 1):
        c = arch.channels(i)
        shapes[f"blk{i}.bn.mean"] = (c,)
        shapes[f"blk{i}.bn.var"] = (c,)
    return shapes


# -- construction --------------------------------------------------------------


def _build_buffers(shapes: dict[str, tuple[int, ...]], dtype) -> dict[str, np.ndarray]:
    out = {}
    for name, shape in shapes.items():
        out[name] = (np.ones(shape, dtype=dtype) if name.endswith(".var")
                     else np.zeros(shape, dtype=dtype))
    return out


def build_generator(arch: ArchConfig, rng_seed: int, init_std: float = 0.02,
                    dtype=np.float32) -> NetParams:
    params = init_params(generator_shapes(arch), init_std, rng_seed, dtype)
    return NetParams(params, _build_buffers(generator_buffer_shapes(arch), dtype))


def build_discriminator(arch: ArchConfig, rng_seed: int, init_std: float = 0.02,
                        dtype=np.float32) -> NetParams:
    _disc_spatial(arch)  # validates halving headroom even in patch mode
    params = init_params(discriminator_shapes(arch), init_std, rng_seed, dtype)
    return NetParams(params, _build_buffers(discriminator_buffer_shapes(arch), dtype))


def count_params(net: NetParams) -> int:
    return sum(t.data.size for t in net.params.values())


# -- forward passes --------------------------------------------------------------


def _cbr(arch: ArchConfig, net: NetParams, prefix: str, x: Tensor, training: bool) -> Tensor:
    p = net.params
    h = conv2d(x, p[f"{prefix}.conv.w"], p[f"{prefix}.conv.b"],
               stride=arch.stride, padding=arch.padding)
    h = batchnorm(h, p[f"{prefix}.bn.gamma"], p[f"{prefix}.bn.beta"], epsilon=_BN_EPS,
                  training=training,
                  running_mean=net.buffers[f"{prefix}.bn.mean"],
                  running_var=net.buffers[f"{prefix}.bn.var"])
    return leaky_relu(h, arch.relu_slope)


def _dbr(arch: ArchConfig, net: NetParams, prefix: str, x: Tensor, training: bool) -> Tensor:
    p = net.params
    h = conv_transpose2d(x, p[f"{prefix}.conv.w"], p[f"{prefix}.conv.b"],
                         stride=arch.stride, padding=arch.padding, output_padding=1)
    h = batchnorm(h, p[f"{prefix}.bn.gamma"], p[f"{prefix}.bn.beta"], epsilon=_BN_EPS,
                  training=training,
                  running_mean=net.buffers[f"{prefix}.bn.mean"],
                  running_var=net.buffers[f"{prefix}.bn.var"])
    return leaky_relu(h, arch.relu_slope)


def _check_image(arch: ArchConfig, t: Tensor, name: str) -> None:
    s = arch.image_size
    if t.data.ndim != 4 or t.shape[1] != arch.in_channels or t.shape[2:] != (s, s):
        raise DimensionError(
            f"{name} must have shape [N, {arch.in_channels}, {s}, {s}], got {t.shape}")


def generator_forward(arch: ArchConfig, net: NetParams, x: Tensor,
                      training: bool = True) -> Tensor:
    """Map a source glyph batch to generated target-style glyphs.

    Output matches the input shape; values are pixel-is-ink probabilities,
    strictly inside (0, 1).
    """
    _check_image(arch, x, "generator input")
    n = arch.depth
    encoded = []
    h = x
    for i in range(1, n + 1):
        h = _cbr(arch, net, f"enc{i}", h, training)
        encoded.append(h)
    d = h  # 1x1 latent
    for j in range(1, n):
        inp = d if j == 1 else concat_channels(d, encoded[n - j])
        d = _dbr(arch, net, f"dec{j}", inp, training)
    final_in = concat_channels(d, encoded[0])
    y = conv_transpose2d(final_in, net.params["out.conv.w"], net.params["out.conv.b"],
                         stride=arch.stride, padding=arch.padding, output_padding=1)
    return sigmoid(y).clamp(_PROB_EPS, 1.0 - _PROB_EPS)


def discriminator_forward(arch: ArchConfig, net: NetParams, condition: Tensor,
                          candidate: Tensor, training: bool = True) -> Tensor:
    """Probability that candidate is the genuine target for condition.

    Returns [N, 1] in scalar-head mode, or [N, 1, h, w] of local verdicts in
    patch mode; every value lies strictly inside (0, 1).
    """
    _check_image(arch, condition, "discriminator condition")
    _check_image(arch, candidate, "discriminator candidate")
    h = concat_channels(condition, candidate)
    for i in range(1, arch.disc_blocks + 1):
        h = _cbr(arch, net, f"blk{i}", h, training)
    if arch.patch_output:
        logits = conv2d(h, net.params["head.conv.w"], net.params["head.conv.b"],
                        stride=1, padding=arch.padding)
    else:
        n_items = h.shape[0]
        flat = h.reshape(n_items, h.shape[1] * h.shape[2] * h.shape[3])
        logits = fully_connected(flat, net.params["head.fc.w"], net.params["head.fc.b"])
    return sigmoid(logits).clamp(_PROB_EPS, 1.0 - _PROB_EPS)

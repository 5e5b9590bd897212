"""Network building blocks.

Each block is a pair of functions: ``init_*`` creates its parameters in a
flat ``{name: Tensor}`` mapping under a key prefix, and ``*_forward`` runs
it.  Keeping parameters in one flat mapping makes checkpointing and
finite-difference checks straightforward.

Every convolution is followed by a ReLU except the final 1x1 projections
that produce logits or orientation values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, MutableMapping

import numpy as np

from .autograd import ConvSpec, Tensor, add_n, bilinear_upsample, concat, conv2d, relu
from .exceptions import ConfigurationError

Params = MutableMapping[str, Tensor]


@dataclass(frozen=True)
class MCLConfig:
    """Multi-rate context learner: parallel dilated 3x3 branches plus an
    optional 1x1 branch, summed and projected by a 1x1 conv."""

    dilation_rates: tuple[int, ...] = (6, 12, 18)
    branch_channels: int = 64
    include_pointwise_branch: bool = True

    def __post_init__(self):
        rates = tuple(int(r) for r in self.dilation_rates)
        object.__setattr__(self, "dilation_rates", rates)
        if any(r < 1 for r in rates):
            raise ConfigurationError(f"dilation rates must be positive, got {rates}")
        if len(set(rates)) != len(rates) and any(r != 1 for r in rates):
            raise ConfigurationError(f"dilation rates must be distinct, got {rates}")
        if not rates and not self.include_pointwise_branch:
            raise ConfigurationError("MCL needs at least one branch")
        if self.branch_channels < 1:
            raise ConfigurationError("branch_channels must be >= 1")


@dataclass(frozen=True)
class BRFConfig:
    """Bilateral response fusion: concat(bilateral, occlusion) -> 3x3 -> 3x3."""

    bilateral_channels: int = 64
    occlusion_channels: int = 16
    fused_channels: int = 64

    def __post_init__(self):
        if self.bilateral_channels < 1 or self.occlusion_channels < 1 or self.fused_channels < 1:
            raise ConfigurationError(f"BRF channel counts must be >= 1: {self}")


@dataclass(frozen=True)
class StripeConfig:
    """Orthogonal stripe kernels followed by a 3x3 refinement."""

    vertical_kernel: tuple[int, int] = (11, 3)
    horizontal_kernel: tuple[int, int] = (3, 11)
    refine_kernel: tuple[int, int] = (3, 3)
    channels: int = 16

    def __post_init__(self):
        v = tuple(int(k) for k in self.vertical_kernel)
        h = tuple(int(k) for k in self.horizontal_kernel)
        object.__setattr__(self, "vertical_kernel", v)
        object.__setattr__(self, "horizontal_kernel", h)
        object.__setattr__(self, "refine_kernel", tuple(int(k) for k in self.refine_kernel))
        if v != h[::-1]:
            raise ConfigurationError(f"stripe kernels must be transposes of each other: {v} vs {h}")
        if min(v) < 1 or self.channels < 1:
            raise ConfigurationError(f"invalid stripe config {self}")

    @classmethod
    def with_length(cls, length: int, width: int = 3, channels: int = 16) -> "StripeConfig":
        """Kernels ``length x width`` and ``width x length``; length 3 is the plain 3x3 head."""
        return cls((length, width), (width, length), channels=channels)


@dataclass(frozen=True)
class EdgePathConfig:
    low_channels: int = 4
    high_channels: int = 8
    fused_channels: int = 16
    refine_convs: int = 2

    def __post_init__(self):
        if min(self.low_channels, self.high_channels, self.fused_channels) < 1 or self.refine_convs < 0:
            raise ConfigurationError(f"invalid edge path config {self}")


# -- parameter helpers ---------------------------------------------------------


def init_conv(
    params: Params,
    key: str,
    in_channels: int,
    out_channels: int,
    kernel: tuple[int, int],
    rng: np.random.Generator,
    dtype=np.float32,
    gain: float = 2.0,
) -> None:
    """He (fan-in) initialisation, zero bias."""
    kh, kw = kernel
    fan_in = in_channels * kh * kw
    w = rng.standard_normal((out_channels, in_channels, kh, kw)) * np.sqrt(gain / fan_in)
    params[f"{key}.weight"] = Tensor(w.astype(dtype), requires_grad=True, name=f"{key}.weight")
    params[f"{key}.bias"] = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True, name=f"{key}.bias")


def conv_layer(x: Tensor, params: Mapping[str, Tensor], key: str, stride: int = 1, dilation: int = 1) -> Tensor:
    """Same-padded convolution whose geometry is read from the stored weight."""
    try:
        w = params[f"{key}.weight"]
        b = params[f"{key}.bias"]
    except KeyError:
        raise ConfigurationError(f"missing parameters for layer {key!r}") from None
    out_c, in_c, kh, kw = w.shape
    if x.shape[1] != in_c:
        raise ConfigurationError(f"layer {key!r} expects {in_c} input channels, got {x.shape[1]}")
    spec = ConvSpec(out_c, kh, kw, stride=stride, dilation=dilation)
    return conv2d(x, spec, w, b)


def conv_relu(x, params, key, stride=1, dilation=1) -> Tensor:
    return relu(conv_layer(x, params, key, stride=stride, dilation=dilation))


def upsample_to(x: Tensor, h: int, w: int) -> Tensor:
    return bilinear_upsample(x, h, w)


# -- multi-rate context learner ---------------------------------------------------


def init_mcl(cfg: MCLConfig, in_channels: int, out_channels: int, rng, dtype=np.float32, prefix="mcl") -> dict:
    p: dict = {}
    c = cfg.branch_channels
    for i, _ in enumerate(cfg.dilation_rates):
        init_conv(p, f"{prefix}.dilated{i}", in_channels, c, (3, 3), rng, dtype)
        init_conv(p, f"{prefix}.refine{i}", c, c, (3, 3), rng, dtype)
    if cfg.include_pointwise_branch:
        init_conv(p, f"{prefix}.pointwise", in_channels, c, (1, 1), rng, dtype)
        init_conv(p, f"{prefix}.pointwise_refine", c, c, (3, 3), rng, dtype)
    init_conv(p, f"{prefix}.project", c, out_channels, (1, 1), rng, dtype)
    return p


def mcl_forward(x: Tensor, cfg: MCLConfig, params: Mapping[str, Tensor], prefix: str = "mcl") -> Tensor:
    """Bilateral feature map: 1x1 projection of the summed branch responses.

    Each dilated branch (and the 1x1 branch) is followed by its own dense
    3x3 conv, which suppresses the gridding pattern of sparse dilated taps.
    """
    if x.data.ndim != 4:
        raise ConfigurationError(f"mcl_forward expects NCHW input, got {x.shape}")
    branches = []
    for i, rate in enumerate(cfg.dilation_rates):
        y = conv_relu(x, params, f"{prefix}.dilated{i}", dilation=rate)
        branches.append(conv_relu(y, params, f"{prefix}.refine{i}"))
    if cfg.include_pointwise_branch:
        y = conv_relu(x, params, f"{prefix}.pointwise")
        branches.append(conv_relu(y, params, f"{prefix}.pointwise_refine"))
    return conv_relu(add_n(branches), params, f"{prefix}.project")


# -- bilateral response fusion ------------------------------------------------------


def init_brf(cfg: BRFConfig, rng, dtype=np.float32, prefix="brf") -> dict:
    p: dict = {}
    init_conv(p, f"{prefix}.conv1", cfg.bilateral_channels + cfg.occlusion_channels, cfg.fused_channels, (3, 3), rng, dtype)
    init_conv(p, f"{prefix}.conv2", cfg.fused_channels, cfg.fused_channels, (3, 3), rng, dtype)
    return p


def brf_forward(b: Tensor, d: Tensor, cfg: BRFConfig, params: Mapping[str, Tensor], prefix: str = "brf") -> Tensor:
    if b.shape[1] != cfg.bilateral_channels or d.shape[1] != cfg.occlusion_channels:
        raise ConfigurationError(
            f"BRF expects {cfg.bilateral_channels}+{cfg.occlusion_channels} channels, "
            f"got {b.shape[1]}+{d.shape[1]}"
        )
    if b.shape[2:] != d.shape[2:]:
        raise ConfigurationError(f"BRF inputs differ in spatial size: {b.shape[2:]} vs {d.shape[2:]}")
    y = conv_relu(concat([b, d]), params, f"{prefix}.conv1")
    return conv_relu(y, params, f"{prefix}.conv2")


# -- stripe reasoning head --------------------------------------------------------


def init_stripe(cfg: StripeConfig, in_channels: int, rng, dtype=np.float32, prefix="stripe") -> dict:
    p: dict = {}
    init_conv(p, f"{prefix}.vertical", in_channels, cfg.channels, cfg.vertical_kernel, rng, dtype)
    init_conv(p, f"{prefix}.horizontal", in_channels, cfg.channels, cfg.horizontal_kernel, rng, dtype)
    init_conv(p, f"{prefix}.refine", 2 * cfg.channels, cfg.channels, cfg.refine_kernel, rng, dtype)
    return p


def stripe_reason_forward(f: Tensor, cfg: StripeConfig, params: Mapping[str, Tensor], prefix: str = "stripe") -> Tensor:
    v = conv_relu(f, params, f"{prefix}.vertical")
    h = conv_relu(f, params, f"{prefix}.horizontal")
    return conv_relu(concat([v, h]), params, f"{prefix}.refine")


# -- edge path ------------------------------------------------------------------


def init_edge_path(cfg: EdgePathConfig, low_channels: int, high_channels: int, rng, dtype=np.float32, prefix="edge") -> dict:
    brf_cfg = BRFConfig(high_channels, low_channels, cfg.fused_channels)
    p = init_brf(brf_cfg, rng, dtype, prefix=f"{prefix}.brf")
    for i in range(cfg.refine_convs):
        init_conv(p, f"{prefix}.refine{i}", cfg.fused_channels, cfg.fused_channels, (3, 3), rng, dtype)
    init_conv(p, f"{prefix}.logits", cfg.fused_channels, 1, (1, 1), rng, dtype, gain=1.0)
    return p


def edge_path_forward(
    low_feats: list[Tensor],
    high_feats: Tensor,
    params: Mapping[str, Tensor],
    cfg: EdgePathConfig = EdgePathConfig(),
    prefix: str = "edge",
) -> Tensor:
    """Fuse full-resolution low-level taps with high-level features and
    return one-channel edge logits at the resolution of ``low_feats``."""
    if not low_feats:
        raise ConfigurationError("edge path needs at least one low-level feature map")
    h, w = low_feats[0].shape[2:]
    for t in low_feats:
        if t.shape[2:] != (h, w):
            raise ConfigurationError(f"low-level taps must share resolution, got {t.shape[2:]} vs {(h, w)}")
    low = concat(low_feats)
    if high_feats.shape[2:] != (h, w):
        high_feats = upsample_to(high_feats, h, w)
    brf_cfg = BRFConfig(high_feats.shape[1], low.shape[1], cfg.fused_channels)
    y = brf_forward(high_feats, low, brf_cfg, params, prefix=f"{prefix}.brf")
    for i in range(cfg.refine_convs):
        y = conv_relu(y, params, f"{prefix}.refine{i}")
    return conv_layer(y, params, f"{prefix}.logits")

"""Two-path occlusion network: a shared backbone and decoder (the occlusion
cue), an edge path and an orientation path.

Layout of the default variant::

    image -> stem (1) -> stage1 (1/2) -> stage2 (1/4) -> stage3 (1/8, dilated block)
    decoder: stage3 -> +stage2 -> +stage1 -> +stem  => occlusion cue D (full res)
    edge path: 1x1 taps of stem/stage1/stage2 (low) + [D, 3x3(stage3)] (high)
               -> BRF -> refine convs -> 1x1 -> edge logits
    orientation path: MCL(stage3) -> upsample -> BRF(B, D) -> stripe head -> 1x1 -> atan2

Checkpoint layout (all integers little-endian)::

    b"OFNT" | uint32 version | uint32 header length | UTF-8 JSON header | payloads

The JSON header holds the step counter, the model variant and, per tensor,
its name, dtype and shape.  Payloads are raw little-endian float32 arrays in
header order.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor, atan2, bilinear_upsample, concat, crop, sigmoid, slice_channels
from .blocks import (
    BRFConfig,
    EdgePathConfig,
    MCLConfig,
    StripeConfig,
    brf_forward,
    conv_layer,
    conv_relu,
    edge_path_forward,
    init_brf,
    init_conv,
    init_edge_path,
    init_mcl,
    init_stripe,
    mcl_forward,
    stripe_reason_forward,
)
from .exceptions import (
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigurationError,
    NotACheckpointError,
    TruncatedCheckpointError,
)

CHECKPOINT_MAGIC = b"OFNT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BackboneSpec:
    """Residual backbone: a full-resolution stem followed by stride-2 stages.

    ``dilated_stages`` lists stage indices (1-based) that keep the previous
    resolution and use dilation 2 instead of stride 2.  The last stage's
    residual blocks are always dilated.
    """

    name: str = "tiny"
    widths: tuple[int, ...] = (8, 16, 32, 32)
    blocks_per_stage: int = 1
    dilated_stages: tuple[int, ...] = ()
    decoder_widths: tuple[int, int] = (24, 16)

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "dilated_stages", tuple(int(s) for s in self.dilated_stages))
        object.__setattr__(self, "decoder_widths", tuple(int(w) for w in self.decoder_widths))
        if len(self.widths) != 4:
            raise ConfigurationError("backbone needs 4 widths (stem + 3 stages)")
        if min(self.widths) < 1 or self.blocks_per_stage < 0 or min(self.decoder_widths) < 1:
            raise ConfigurationError(f"invalid backbone {self}")

    @property
    def stride(self) -> int:
        return 2 ** (3 - len([s for s in self.dilated_stages if 1 <= s <= 3]))


BACKBONES = {
    "tiny": BackboneSpec("tiny", (8, 16, 32, 32), 1, (), (24, 16)),
    "small": BackboneSpec("small", (16, 32, 64, 64), 2, (), (48, 24)),
}


ORIENTATION_HEADS = ("vector", "angle")


@dataclass(frozen=True)
class ModelVariant:
    """Configuration of one network variant.

    Ablation flags:

    * ``disable_mcl`` - the context learner is replaced by one plain 3x3 conv.
    * ``disable_stripe`` - stripe kernels become 3x3 (plain reasoning head).
    * ``share_decoder_only`` - single-flow baseline: both heads read only the
      decoder features, no separate high-level paths.
    * ``single_edge_stream`` - the edge path does not consume the shared
      occlusion cue.
    * ``single_ori_stream`` - the orientation path does not consume the
      shared occlusion cue (fusion runs on the bilateral map alone).
    * ``disable_low_cues`` / ``disable_edge_high_cues`` - drop the low-level
      taps or the edge-specific high-level features from the edge path.

    ``orientation_head`` is ``"vector"`` (two channels read as the vector
    ``(cos theta, sin theta)``, angle taken with atan2) or ``"angle"`` (one
    unbounded channel read directly as theta).
    """

    backbone: BackboneSpec = BACKBONES["tiny"]
    # rates scaled to the 12-16 px stride-8 maps of 96-128 px inputs; 6/12/18
    # would leave the two wider branches reading only zero padding
    mcl: MCLConfig = MCLConfig(dilation_rates=(2, 4, 6), branch_channels=24)
    brf: BRFConfig = BRFConfig(bilateral_channels=32, occlusion_channels=8, fused_channels=16)
    stripe: StripeConfig = StripeConfig(channels=12)
    edge: EdgePathConfig = EdgePathConfig()
    disable_mcl: bool = False
    disable_stripe: bool = False
    share_decoder_only: bool = False
    single_edge_stream: bool = False
    single_ori_stream: bool = False
    disable_low_cues: bool = False
    disable_edge_high_cues: bool = False
    orientation_head: str = "vector"

    def __post_init__(self):
        if self.orientation_head not in ORIENTATION_HEADS:
            raise ConfigurationError(f"orientation_head must be one of {ORIENTATION_HEADS}, got {self.orientation_head!r}")
        if self.single_edge_stream and self.disable_low_cues and self.disable_edge_high_cues:
            raise ConfigurationError("edge path would have no inputs")
        if self.share_decoder_only and (self.single_edge_stream or self.single_ori_stream):
            raise ConfigurationError("share_decoder_only cannot be combined with single-stream flags")
        if self.disable_low_cues and self.share_decoder_only:
            raise ConfigurationError("share_decoder_only already has no low-level cues")

    @property
    def effective_stripe(self) -> StripeConfig:
        if self.disable_stripe:
            return StripeConfig.with_length(3, channels=self.stripe.channels)
        return self.stripe

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelVariant":
        d = dict(d)
        nested = {"backbone": BackboneSpec, "mcl": MCLConfig, "brf": BRFConfig, "stripe": StripeConfig, "edge": EdgePathConfig}
        for key, typ in nested.items():
            if key in d and isinstance(d[key], dict):
                d[key] = typ(**d[key])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown ModelVariant fields: {sorted(unknown)}")
        return cls(**d)


def variant_by_name(name: str, **overrides) -> ModelVariant:
    """Named variants used by the CLI and the ablation runner."""
    presets = {
        "default": {},
        "tiny": {},
        "small": {
            "backbone": BACKBONES["small"],
            "mcl": MCLConfig(branch_channels=64),
            "brf": BRFConfig(64, 16, 32),
            "stripe": StripeConfig(channels=24),
            "edge": EdgePathConfig(8, 16, 24),
        },
        "mcl_wide": {"mcl": MCLConfig(branch_channels=24)},
        "no_mcl": {"disable_mcl": True},
        "plain_head": {"disable_stripe": True},
        "baseline": {"share_decoder_only": True},
        "single_edge": {"single_edge_stream": True},
        "single_ori": {"single_ori_stream": True},
        "no_low_cues": {"disable_low_cues": True},
        "no_edge_high": {"disable_edge_high_cues": True},
    }
    if name.startswith("brf"):
        # brf<bilateral>_<occlusion>, e.g. brf16_8
        try:
            b, o = name[3:].split("_")
            presets[name] = {"brf": BRFConfig(int(b), int(o), ModelVariant().brf.fused_channels)}
        except ValueError:
            pass
    elif name.startswith("stripe"):
        # stripe<length>, e.g. stripe7 -> 7x3 / 3x7
        try:
            presets[name] = {"stripe": StripeConfig.with_length(int(name[6:]), channels=ModelVariant().stripe.channels)}
        except ValueError:
            pass
    if name not in presets:
        raise ConfigurationError(f"unknown variant {name!r}")
    kw = dict(presets[name])
    kw.update(overrides)
    return ModelVariant(**kw)


def _stage_plan(bb: BackboneSpec):
    """(in_channels, out_channels, stride, block dilation) per stage."""
    plan = []
    dil = 1
    for s in (1, 2, 3):
        if s in bb.dilated_stages:
            stride, dil = 1, dil * 2
        else:
            stride = 2
        block_dil = max(dil, 2) if s == 3 else dil
        plan.append((bb.widths[s - 1], bb.widths[s], stride, block_dil))
    return plan


class OFNet:
    """Parameters plus forward pass of one model variant."""

    def __init__(self, variant: ModelVariant, params: dict[str, Tensor]):
        self.variant = variant
        self.params = params
        self.step = 0

    # -- construction ------------------------------------------------------------------

    @classmethod
    def build(cls, variant: ModelVariant | None = None, seed: int = 0, dtype=np.float32) -> "OFNet":
        variant = variant or ModelVariant()
        rng = np.random.default_rng(seed)
        bb = variant.backbone
        p: dict[str, Tensor] = {}

        init_conv(p, "stem.conv0", 3, bb.widths[0], (3, 3), rng, dtype)
        init_conv(p, "stem.conv1", bb.widths[0], bb.widths[0], (3, 3), rng, dtype)
        for s, (cin, cout, _, _) in enumerate(_stage_plan(bb), start=1):
            init_conv(p, f"stage{s}.down", cin, cout, (3, 3), rng, dtype)
            for k in range(bb.blocks_per_stage):
                init_conv(p, f"stage{s}.block{k}.conv0", cout, cout, (3, 3), rng, dtype)
                init_conv(p, f"stage{s}.block{k}.conv1", cout, cout, (3, 3), rng, dtype, gain=1.0)

        w0, w1, w2, w3 = bb.widths
        dw2, dw1 = bb.decoder_widths
        occ = variant.brf.occlusion_channels
        init_conv(p, "decoder.up2", w3 + w2, dw2, (3, 3), rng, dtype)
        init_conv(p, "decoder.up1", dw2 + w1, dw1, (3, 3), rng, dtype)
        init_conv(p, "decoder.up0", dw1 + w0, occ, (3, 3), rng, dtype)

        ec = variant.edge
        if variant.share_decoder_only:
            init_conv(p, "edge.head0", occ, ec.fused_channels, (3, 3), rng, dtype)
            init_conv(p, "edge.head1", ec.fused_channels, ec.fused_channels, (3, 3), rng, dtype)
            init_conv(p, "edge.logits", ec.fused_channels, 1, (1, 1), rng, dtype, gain=1.0)
            sc = variant.stripe.channels
            init_conv(p, "ori.head0", occ, sc, (3, 3), rng, dtype)
            init_conv(p, "ori.head1", sc, sc, (3, 3), rng, dtype)
            _init_orientation_out(p, variant, sc, rng, dtype)
            return cls(variant, p)

        low_c = 0
        if not variant.disable_low_cues:
            for t, w in enumerate((w0, w1, w2)):
                init_conv(p, f"edge.tap{t}", w, ec.low_channels, (1, 1), rng, dtype)
            low_c = 3 * ec.low_channels
        high_c = 0
        if not variant.disable_edge_high_cues:
            init_conv(p, "edge.high", w3, ec.high_channels, (3, 3), rng, dtype)
            high_c += ec.high_channels
        if not variant.single_edge_stream:
            high_c += occ
        if low_c == 0:
            # without low cues the fusion partner is the decoder cue alone
            low_c, high_c = high_c, 0
        if high_c == 0:
            init_conv(p, "edge.solo", low_c, ec.fused_channels, (3, 3), rng, dtype)
            for i in range(ec.refine_convs):
                init_conv(p, f"edge.refine{i}", ec.fused_channels, ec.fused_channels, (3, 3), rng, dtype)
            init_conv(p, "edge.logits", ec.fused_channels, 1, (1, 1), rng, dtype, gain=1.0)
        else:
            p.update(init_edge_path(ec, low_c, high_c, rng, dtype, prefix="edge"))

        bil = variant.brf.bilateral_channels
        if variant.disable_mcl:
            init_conv(p, "ori.context", w3, bil, (3, 3), rng, dtype)
        else:
            p.update(init_mcl(variant.mcl, w3, bil, rng, dtype, prefix="ori.mcl"))
        if variant.single_ori_stream:
            init_conv(p, "ori.fuse.conv1", bil, variant.brf.fused_channels, (3, 3), rng, dtype)
            init_conv(p, "ori.fuse.conv2", variant.brf.fused_channels, variant.brf.fused_channels, (3, 3), rng, dtype)
        else:
            p.update(init_brf(variant.brf, rng, dtype, prefix="ori.brf"))
        stripe = variant.effective_stripe
        p.update(init_stripe(stripe, variant.brf.fused_channels, rng, dtype, prefix="ori.stripe"))
        _init_orientation_out(p, variant, stripe.channels, rng, dtype)
        return cls(variant, p)

    # -- bookkeeping -------------------------------------------------------------------

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def astype(self, dtype) -> "OFNet":
        params = {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in self.params.items()}
        out = OFNet(self.variant, params)
        out.step = self.step
        return out

    def copy(self) -> "OFNet":
        return self.astype(self.dtype)

    # -- forward -----------------------------------------------------------------------

    def _backbone(self, x: Tensor):
        bb = self.variant.backbone
        p = self.params
        y = conv_relu(x, p, "stem.conv0")
        taps = [conv_relu(y, p, "stem.conv1")]
        y = taps[0]
        for s, (_, _, stride, block_dil) in enumerate(_stage_plan(bb), start=1):
            y = conv_relu(y, p, f"stage{s}.down", stride=stride)
            for k in range(bb.blocks_per_stage):
                r = conv_relu(y, p, f"stage{s}.block{k}.conv0", dilation=block_dil)
                r = conv_layer(r, p, f"stage{s}.block{k}.conv1", dilation=block_dil)
                y = _relu_add(y, r)
            taps.append(y)
        return taps  # stem, stage1, stage2, stage3

    def _decoder(self, taps):
        p = self.params
        t0, t1, t2, t3 = taps
        y = t3
        for key, skip in (("decoder.up2", t2), ("decoder.up1", t1), ("decoder.up0", t0)):
            y = bilinear_upsample(y, skip.shape[2], skip.shape[3])
            y = conv_relu(concat([y, skip]), p, key)
        return y

    def forward_logits(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Edge logits and raw orientation for an NCHW batch whose spatial
        size is a multiple of the backbone stride."""
        v, p = self.variant, self.params
        h, w = x.shape[2:]
        taps = self._backbone(x)
        d = self._decoder(taps)

        if v.share_decoder_only:
            e = conv_relu(conv_relu(d, p, "edge.head0"), p, "edge.head1")
            edge = conv_layer(e, p, "edge.logits")
            o = conv_relu(conv_relu(d, p, "ori.head0"), p, "ori.head1")
            return edge, self._orientation(o)

        low = []
        if not v.disable_low_cues:
            for t in range(3):
                low.append(bilinear_upsample(conv_relu(taps[t], p, f"edge.tap{t}"), h, w))
        high = []
        if not v.single_edge_stream:
            high.append(d)
        if not v.disable_edge_high_cues:
            high.append(bilinear_upsample(conv_relu(taps[3], p, "edge.high"), h, w))
        if not low:
            low, high = high, []
        if not high:
            e = conv_relu(concat(low), p, "edge.solo")
            for i in range(v.edge.refine_convs):
                e = conv_relu(e, p, f"edge.refine{i}")
            edge = conv_layer(e, p, "edge.logits")
        else:
            edge = edge_path_forward(low, concat(high), p, v.edge, prefix="edge")

        if v.disable_mcl:
            b = conv_relu(taps[3], p, "ori.context")
        else:
            b = mcl_forward(taps[3], v.mcl, p, prefix="ori.mcl")
        b = bilinear_upsample(b, h, w)
        if v.single_ori_stream:
            f = conv_relu(conv_relu(b, p, "ori.fuse.conv1"), p, "ori.fuse.conv2")
        else:
            f = brf_forward(b, d, v.brf, p, prefix="ori.brf")
        o = stripe_reason_forward(f, v.effective_stripe, p, prefix="ori.stripe")
        return edge, self._orientation(o)

    def _orientation(self, o: Tensor) -> Tensor:
        out = conv_layer(o, self.params, "ori.out")
        if self.variant.orientation_head == "angle":
            return out
        return atan2(slice_channels(out, 1, 2), slice_channels(out, 0, 1))

    def forward(self, images) -> tuple[Tensor, Tensor]:
        """``images``: N x 3 x H x W in [0, 1].  Returns (edge_prob, orientation).

        Sizes that are not multiples of the backbone stride are zero-padded at
        the bottom/right and the outputs cropped back.
        """
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.dtype))
        if x.data.ndim != 4 or x.shape[1] != 3:
            raise ConfigurationError(f"expected N x 3 x H x W images, got {x.shape}")
        n, _, h, w = x.shape
        if h < 1 or w < 1:
            raise ConfigurationError(f"empty image {h}x{w}")
        stride = self.variant.backbone.stride
        hp, wp = -(-h // stride) * stride, -(-w // stride) * stride
        data = x.data.astype(self.dtype, copy=False) - self.dtype.type(0.5)
        if (hp, wp) != (h, w):
            data = np.pad(data, ((0, 0), (0, 0), (0, hp - h), (0, wp - w)))
        xin = Tensor(data, dtype=self.dtype)
        logits, ori = self.forward_logits(xin)
        if (hp, wp) != (h, w):
            logits, ori = crop(logits, h, w), crop(ori, h, w)
        return sigmoid(logits), ori

    __call__ = forward

    def forward_train(self, images: np.ndarray) -> tuple[Tensor, Tensor]:
        """Logits (not probabilities) and orientation, for the loss."""
        n, _, h, w = images.shape
        stride = self.variant.backbone.stride
        if h % stride or w % stride:
            raise ConfigurationError(f"training crops must be multiples of {stride}, got {h}x{w}")
        data = images.astype(self.dtype, copy=False) - self.dtype.type(0.5)
        return self.forward_logits(Tensor(data, dtype=self.dtype))

    def predict(self, images: np.ndarray, batch_size: int = 4) -> tuple[np.ndarray, np.ndarray]:
        """Numpy convenience: N x 3 x H x W -> (N x H x W edge prob, N x H x W orientation)."""
        edges, oris = [], []
        for i in range(0, len(images), batch_size):
            e, o = self.forward(images[i : i + batch_size])
            edges.append(e.data[:, 0])
            oris.append(o.data[:, 0])
        return np.concatenate(edges), np.concatenate(oris)

    # -- persistence -------------------------------------------------------------------

    def save(self, path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path, variant: ModelVariant | None = None) -> "OFNet":
        return load_checkpoint(path, variant)


def _init_orientation_out(p, variant: ModelVariant, in_channels: int, rng, dtype) -> None:
    if variant.orientation_head == "angle":
        init_conv(p, "ori.out", in_channels, 1, (1, 1), rng, dtype, gain=0.1)
    else:
        init_conv(p, "ori.out", in_channels, 2, (1, 1), rng, dtype, gain=1.0)


def _relu_add(a: Tensor, b: Tensor) -> Tensor:
    from .autograd import add, relu

    return relu(add(a, b))


def build_model(variant: ModelVariant | None = None, seed: int = 0, dtype=np.float32) -> OFNet:
    return OFNet.build(variant, seed=seed, dtype=dtype)


def save_checkpoint(model: OFNet, path) -> None:
    names = list(model.params)
    header = {
        "step": int(model.step),
        "variant": model.variant.to_dict(),
        "tensors": [{"name": k, "dtype": "float32", "shape": list(model.params[k].shape)} for k in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(model.params[k].data, dtype="<f4").tobytes())
    tmp.replace(path)


def load_checkpoint(path, variant: ModelVariant | None = None) -> OFNet:
    """Load a checkpoint.  If ``variant`` is given, the stored tensors must
    match the parameters that variant builds (name and shape)."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise NotACheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    if len(raw) < 12:
        raise TruncatedCheckpointError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if len(raw) < 12 + hlen:
        raise TruncatedCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise NotACheckpointError(f"{path}: unreadable header ({exc})") from None

    stored_variant = ModelVariant.from_dict(header["variant"])
    target = variant or stored_variant
    offset = 12 + hlen
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(raw):
            raise TruncatedCheckpointError(f"{path}: payload of {entry['name']!r} is truncated")
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise TruncatedCheckpointError(f"{path}: {len(raw) - offset} trailing bytes")

    template = OFNet.build(target, seed=0)
    for name, t in template.params.items():
        if name not in arrays:
            raise CheckpointShapeError(f"{path}: tensor {name!r} missing from checkpoint")
        if arrays[name].shape != t.shape:
            raise CheckpointShapeError(
                f"{path}: tensor {name!r} has shape {arrays[name].shape}, model expects {t.shape}"
            )
    extra = [k for k in arrays if k not in template.params]
    if extra:
        raise CheckpointShapeError(f"{path}: tensor {extra[0]!r} not present in the target model")

    params = {k: Tensor(arrays[k].astype(np.float32), requires_grad=True, name=k) for k in template.params}
    model = OFNet(target, params)
    model.step = int(header["step"])
    return model

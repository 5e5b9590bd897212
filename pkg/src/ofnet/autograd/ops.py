"""Differentiable primitives used by the network.

Convolution is computed with an im2col view (``numpy.lib.stride_tricks``)
followed by a single matmul over the whole batch; its input gradient is scattered
back tap by tap, so the cost of the backward pass grows with the kernel
area rather than the image size squared.

Bilinear upsampling uses half-pixel (align-corners false) sampling.  Output
pixel ``i`` of an axis resized from ``n`` to ``m`` samples the source
coordinate::

    s = (i + 0.5) * n / m - 0.5        clamped to [0, n - 1]

and blends ``floor(s)`` and ``floor(s) + 1`` with weights ``1 - frac(s)``
and ``frac(s)``.  Both axes are applied as dense interpolation matrices
(``out = A_h @ x @ A_w.T``), which makes the backward pass the transpose
product.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..exceptions import ConfigurationError, NumericError
from .tensor import Tensor


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ConfigurationError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution layer.

    ``padding=None`` selects "same" padding ``floor((k - 1) * dilation / 2)``
    per side and axis.
    """

    out_channels: int
    kernel_h: int = 3
    kernel_w: int = 3
    stride: int = 1
    dilation: int = 1
    padding: tuple[int, int] | int | None = None

    def __post_init__(self):
        if self.out_channels < 1:
            raise ConfigurationError(f"out_channels must be >= 1, got {self.out_channels}")
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ConfigurationError(f"kernel must be >= 1x1, got {self.kernel_h}x{self.kernel_w}")
        if self.dilation < 1:
            raise ConfigurationError(f"dilation must be >= 1, got {self.dilation}")
        if self.stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")
        if self.padding is not None:
            ph, pw = _pair(self.padding)
            if ph < 0 or pw < 0:
                raise ConfigurationError(f"padding must be non-negative, got {self.padding}")

    @property
    def pads(self) -> tuple[int, int]:
        if self.padding is None:
            return ((self.kernel_h - 1) * self.dilation // 2, (self.kernel_w - 1) * self.dilation // 2)
        return _pair(self.padding)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        ph, pw = self.pads
        eff_h = (self.kernel_h - 1) * self.dilation + 1
        eff_w = (self.kernel_w - 1) * self.dilation + 1
        return (h + 2 * ph - eff_h) // self.stride + 1, (w + 2 * pw - eff_w) // self.stride + 1

    def weight_shape(self, in_channels: int) -> tuple[int, int, int, int]:
        return (self.out_channels, in_channels, self.kernel_h, self.kernel_w)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """2-D cross-correlation of an NCHW tensor, covering dense, dilated and
    rectangular kernels."""
    if x.data.ndim != 4:
        raise ConfigurationError(f"conv2d expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if weight.shape != spec.weight_shape(c):
        raise ConfigurationError(
            f"weight shape {weight.shape} does not match spec {spec.weight_shape(c)} for {c} input channels"
        )
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ConfigurationError(f"bias shape {bias.shape} != ({spec.out_channels},)")
    if not np.isfinite(x.data).all():
        raise NumericError("conv2d received non-finite input")

    kh, kw, s, d = spec.kernel_h, spec.kernel_w, spec.stride, spec.dilation
    ph, pw = spec.pads
    ho, wo = spec.output_size(h, w)
    if ho < 1 or wo < 1:
        raise ConfigurationError(f"input {h}x{w} too small for kernel {kh}x{kw} (dilation {d})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    xp = np.ascontiguousarray(xp)
    st = xp.strides
    # columns laid out as (C*kh*kw, N*Ho*Wo) so both GEMMs below read
    # contiguous or plainly transposed operands
    cols = as_strided(
        xp,
        shape=(c, kh, kw, n, ho, wo),
        strides=(st[1], st[2] * d, st[3] * d, st[0], st[2] * s, st[3] * s),
        writeable=False,
    ).reshape(c * kh * kw, n * ho * wo)
    cout = spec.out_channels
    w2 = weight.data.reshape(cout, -1)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)
    out = np.ascontiguousarray(out)

    hp, wp = xp.shape[2], xp.shape[3]
    x_needs = x.requires_grad

    def _backward(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, n * ho * wo)
        gw = (g2 @ cols.T).reshape(weight.shape)
        gb = g2.sum(axis=1) if bias is not None else None
        gx = None
        if x_needs:
            gcols = (w2.T @ g2).reshape(c, kh, kw, n, ho, wo)
            gxp = np.zeros((c, n, hp, wp), dtype=g.dtype)
            for i in range(kh):
                r0 = i * d
                for j in range(kw):
                    c0 = j * d
                    gxp[:, :, r0 : r0 + s * (ho - 1) + 1 : s, c0 : c0 + s * (wo - 1) + 1 : s] += gcols[:, i, j]
            gx = gxp[:, :, ph : ph + h, pw : pw + w].transpose(1, 0, 2, 3)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor.from_op(out, parents, _backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    pos = x.data > 0
    return Tensor.from_op(out, (x,), lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    # tanh form avoids overflow in exp for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def atan2(y: Tensor, x: Tensor) -> Tensor:
    """Elementwise angle of the vector ``(x, y)``, in (-pi, pi]."""
    if y.shape != x.shape:
        raise ConfigurationError(f"atan2: shape mismatch {y.shape} vs {x.shape}")
    out = np.arctan2(y.data, x.data)
    r2 = x.data * x.data + y.data * y.data
    # the angle of a zero vector is flat in every direction
    inv = np.where(r2 > 0, 1.0 / np.where(r2 > 0, r2, 1.0), 0.0).astype(out.dtype)
    return Tensor.from_op(out, (y, x), lambda g: (g * x.data * inv, -g * y.data * inv))


_POINTWISE = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def pointwise(x: Tensor, fn: str) -> Tensor:
    try:
        op = _POINTWISE[fn]
    except KeyError:
        raise ConfigurationError(f"unsupported pointwise fn {fn!r}; choose from {sorted(_POINTWISE)}") from None
    return op(x)


@lru_cache(maxsize=128)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    a = np.zeros((n_out, n_in), dtype=np.float64)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(a, (rows, lo), 1.0 - frac)
    np.add.at(a, (rows, hi), frac)
    a.setflags(write=False)
    return a


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if x.data.ndim != 4:
        raise ConfigurationError(f"bilinear_upsample expects NCHW input, got shape {x.shape}")
    h, w = x.shape[2], x.shape[3]
    if out_h < h or out_w < w:
        raise ConfigurationError(f"bilinear_upsample cannot downsample {h}x{w} -> {out_h}x{out_w}")
    if (out_h, out_w) == (h, w):
        return x
    ah = _interp_matrix(h, out_h).astype(x.dtype)
    aw = _interp_matrix(w, out_w).astype(x.dtype)
    out = np.matmul(ah, np.matmul(x.data, aw.T))

    def _backward(g):
        return (np.matmul(ah.T, np.matmul(g, aw)),)

    return Tensor.from_op(out, (x,), _backward)


def concat(tensors: list[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along channels."""
    if not tensors:
        raise ConfigurationError("concat needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ConfigurationError(f"concat: shape {t.shape} incompatible with {ref}")
    if len(tensors) == 1:
        return tensors[0]
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def _backward(g):
        return tuple(g[:, bounds[k] : bounds[k + 1]] for k in range(len(tensors)))

    return Tensor.from_op(out, tuple(tensors), _backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    return concat([a, b])


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.data[:, start:stop]
    shape, dtype = x.shape, x.dtype

    def _backward(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[:, start:stop] = g
        return (gx,)

    return Tensor.from_op(out, (x,), _backward)


def crop(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left ``h x w`` window of an NCHW tensor."""
    if (h, w) == x.shape[2:]:
        return x
    out = x.data[:, :, :h, :w]
    shape, dtype = x.shape, x.dtype

    def _backward(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[:, :, :h, :w] = g
        return (gx,)

    return Tensor.from_op(out, (x,), _backward)


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return Tensor.from_op(a.data + np.asarray(b, dtype=a.dtype), (a,), lambda g: (g,))
    if a.shape != b.shape:
        raise ConfigurationError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g))


def add_n(tensors: list[Tensor]) -> Tensor:
    out = tensors[0]
    for t in tensors[1:]:
        out = add(out, t)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ConfigurationError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return Tensor.from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, factor: float) -> Tensor:
    f = x.dtype.type(factor)
    return Tensor.from_op(x.data * f, (x,), lambda g: (g * f,))


def tensor_sum(x: Tensor) -> Tensor:
    shape, dtype = x.shape, x.dtype
    out = np.asarray(x.data.sum(dtype=dtype), dtype=dtype)
    return Tensor.from_op(out, (x,), lambda g: (np.broadcast_to(g, shape).astype(dtype),))


def square(x: Tensor) -> Tensor:
    return Tensor.from_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))

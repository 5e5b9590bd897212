"""Training objective: class-balanced focal-style edge loss plus a smooth-L1
penalty on wrapped orientation residuals.

For an edge probability ``y`` and label ``e`` the per-pixel edge term is::

    AL(y, e) = -e * a * (1 - y)**g * log(y) - (1 - e) * (1 - a) * y**g * log(1 - y)

with focusing exponent ``g`` and positive-class weight ``a`` (by default
the fraction of non-edge pixels in the batch).  The log arguments are
clipped to ``[1e-6, 1 - 1e-6]``; the focusing factors are not, so the loss
is exactly zero where ``y == e``.

The objective for a batch of ``M`` images is::

    (1 / M) * (sum AL + lam * sum SL(wrap(o_pred - o_gt)))

where the orientation sum runs over ground-truth edge pixels only unless
``orientation_only_on_gt_edges`` is off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .exceptions import ConfigurationError, NumericError, UsageError

EPS = 1e-6
_MAX_NLL = -np.log(EPS)


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.5
    alpha: float | None = None
    gamma: float = 0.5
    orientation_only_on_gt_edges: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if self.gamma < 0:
            raise ConfigurationError(f"gamma must be >= 0, got {self.gamma}")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")


def wrap_angle(x):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=np.float64), 2.0 * np.pi)


def angular_residual(pred, gt):
    return wrap_angle(np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64))


def smooth_l1(d):
    d = np.abs(np.asarray(d, dtype=np.float64))
    return np.where(d < 1.0, 0.5 * d * d, d - 0.5)


def balance_weight(gt: np.ndarray, alpha: float | None) -> float:
    if alpha is not None:
        return float(alpha)
    gt = np.asarray(gt)
    return float(1.0 - gt.sum() / gt.size) if gt.size else 1.0


def attention_loss_map(pred, gt, alpha: float = 1.0, gamma: float = 0.5) -> np.ndarray:
    y = np.asarray(pred, dtype=np.float64)
    e = np.asarray(gt, dtype=np.float64)
    if y.shape != e.shape:
        raise ConfigurationError(f"pred shape {y.shape} != gt shape {e.shape}")
    if not np.isfinite(y).all() or y.min(initial=0.0) < 0.0 or y.max(initial=0.0) > 1.0:
        raise NumericError("edge probabilities must lie in [0, 1]")
    yc = np.clip(y, EPS, 1.0 - EPS)
    pos = alpha * (1.0 - y) ** gamma * -np.log(yc)
    neg = (1.0 - alpha) * y**gamma * -np.log(1.0 - yc)
    return e * pos + (1.0 - e) * neg


def attention_loss(pred, gt, cfg: LossConfig = LossConfig()) -> float:
    """Summed edge loss over all pixels of ``pred`` (probabilities)."""
    a = balance_weight(gt, cfg.alpha)
    return float(attention_loss_map(pred, gt, a, cfg.gamma).sum())


def orientation_loss(ori_pred, ori_gt, edge_gt, only_on_edges: bool = True) -> float:
    sl = smooth_l1(angular_residual(ori_pred, ori_gt))
    if only_on_edges:
        sl = sl * (np.asarray(edge_gt) > 0)
    return float(sl.sum())


def _batch_size(edge_gt) -> int:
    edge_gt = np.asarray(edge_gt)
    m = edge_gt.shape[0] if edge_gt.ndim >= 3 else 1
    if edge_gt.size == 0 or m == 0:
        raise UsageError("empty batch")
    return m


def total_loss(edge_pred, edge_gt, ori_pred, ori_gt, cfg: LossConfig = LossConfig()) -> float:
    """Objective on numpy arrays (probabilities).  Leading axis is the batch."""
    m = _batch_size(edge_gt)
    al = attention_loss(edge_pred, edge_gt, cfg)
    sl = orientation_loss(ori_pred, ori_gt, edge_gt, cfg.orientation_only_on_gt_edges)
    return (al + cfg.lam * sl) / m


# -- differentiable versions used in training ---------------------------------------


def _softplus(z):
    return np.logaddexp(0.0, z)


def attention_loss_logits(logits: Tensor, gt: np.ndarray, alpha: float, gamma: float) -> Tensor:
    """Sum of the edge loss computed from logits ``z`` (``y = sigmoid(z)``).

    Uses ``log y = -softplus(-z)`` and ``(1 - y)**g = exp(-g * softplus(z))``
    so the gradient stays finite for saturated logits.
    """
    z = logits.data.astype(np.float64)
    e = np.asarray(gt, dtype=np.float64).reshape(z.shape)
    sp_pos = _softplus(z)  # -log(1 - y)
    sp_neg = _softplus(-z)  # -log(y)
    y = np.exp(-sp_neg)
    one_minus_y = np.exp(-sp_pos)
    nll_pos = np.minimum(sp_neg, _MAX_NLL)
    nll_neg = np.minimum(sp_pos, _MAX_NLL)
    focus_pos = np.exp(-gamma * sp_pos)  # (1 - y)**g
    focus_neg = np.exp(-gamma * sp_neg)  # y**g

    pos = alpha * focus_pos * nll_pos
    neg = (1.0 - alpha) * focus_neg * nll_neg
    value = np.sum(e * pos + (1.0 - e) * neg)
    if not np.isfinite(value):
        raise NumericError("edge loss is not finite")

    d_pos = alpha * (-gamma * y * focus_pos * nll_pos - focus_pos * one_minus_y * (sp_neg < _MAX_NLL))
    d_neg = (1.0 - alpha) * (gamma * one_minus_y * focus_neg * nll_neg + focus_neg * y * (sp_pos < _MAX_NLL))
    dz = (e * d_pos + (1.0 - e) * d_neg).astype(logits.dtype)
    out = np.asarray(value, dtype=logits.dtype)
    return Tensor.from_op(out, (logits,), lambda g: (g * dz,))


def wrapped_smooth_l1(ori_pred: Tensor, ori_gt: np.ndarray, mask: np.ndarray | None) -> Tensor:
    d = angular_residual(ori_pred.data, np.asarray(ori_gt).reshape(ori_pred.shape))
    ad = np.abs(d)
    per = np.where(ad < 1.0, 0.5 * d * d, ad - 0.5)
    grad = np.where(ad < 1.0, d, np.sign(d))
    if mask is not None:
        m = (np.asarray(mask).reshape(ori_pred.shape) > 0).astype(np.float64)
        per = per * m
        grad = grad * m
    out = np.asarray(per.sum(), dtype=ori_pred.dtype)
    grad = grad.astype(ori_pred.dtype)
    return Tensor.from_op(out, (ori_pred,), lambda g: (g * grad,))


def training_loss(edge_logits: Tensor, edge_gt, ori_pred: Tensor, ori_gt, cfg: LossConfig = LossConfig()):
    """Differentiable objective.  Returns ``(total, edge_term, orientation_term)``
    where the two terms are already divided by the batch size."""
    from .autograd import add, scale

    m = _batch_size(edge_gt)
    edge_gt = np.asarray(edge_gt)
    a = balance_weight(edge_gt, cfg.alpha)
    al = scale(attention_loss_logits(edge_logits, edge_gt, a, cfg.gamma), 1.0 / m)
    mask = edge_gt if cfg.orientation_only_on_gt_edges else None
    sl = scale(wrapped_smooth_l1(ori_pred, ori_gt, mask), 1.0 / m)
    if cfg.lam == 0:
        return al, al, sl
    return add(al, scale(sl, cfg.lam)), al, sl

"""First-order optimizers operating in place on parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigurationError
from .tensor import Tensor


@dataclass
class OptimState:
    """Hyper-parameters plus per-parameter accumulators.

    ``method`` is ``"adam"`` or ``"sgd"`` (heavy-ball momentum).  Weight
    decay is the decoupled form for Adam and plain L2 for SGD.
    """

    learning_rate: float = 1e-3
    method: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if self.method not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.method!r}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")


def optimizer_step(params: list[Tensor], grads: list[np.ndarray], state: OptimState) -> list[Tensor]:
    if len(params) != len(grads):
        raise ConfigurationError(f"{len(params)} params but {len(grads)} grads")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        if state.method == "adam":
            state.second_moment = [np.zeros_like(p.data) for p in params]
    for p, g, m in zip(params, grads, state.first_moment):
        if g.shape != p.shape or m.shape != p.shape:
            raise ConfigurationError(f"gradient shape {g.shape} does not match parameter {p.shape}")

    state.step += 1
    lr = state.learning_rate
    if state.method == "sgd":
        for p, g, m in zip(params, grads, state.first_moment):
            if state.weight_decay:
                g = g + state.weight_decay * p.data
            m *= state.momentum
            m += g
            p.data -= (lr * m).astype(p.dtype)
        return params

    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            update = update + lr * state.weight_decay * p.data
        p.data -= update.astype(p.dtype)
    return params

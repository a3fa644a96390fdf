"""Adaptive optimizer with decoupled weight decay.

Update per step, with bias correction applied exactly once:

    p <- p * (1 - lr * weight_decay)              (decoupled decay)
    m <- beta1 * m + (1 - beta1) * g
    v <- beta2 * v + (1 - beta2) * g^2
    p <- p - lr * (m / (1 - beta1^k)) / (sqrt(v / (1 - beta2^k)) + eps)

Gradients are left untouched; the caller zeroes them between steps. All
arithmetic is plain elementwise numpy, so the step is bit-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .tensor import Parameter


@dataclass
class OptimizerState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_optimizer(params: list[Parameter], learning_rate: float, *,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8, weight_decay: float = 0.0) -> OptimizerState:
    if learning_rate <= 0 or eps <= 0 or weight_decay < 0:
        raise ContractViolation("learning_rate and eps must be positive, weight_decay >= 0")
    if not (0 < beta1 < 1 and 0 < beta2 < 1):
        raise ContractViolation("moment decays must lie in (0, 1)")
    state = OptimizerState(learning_rate, beta1, beta2, eps, weight_decay)
    for p in params:
        state.m[p.name] = np.zeros_like(p.data)
        state.v[p.name] = np.zeros_like(p.data)
    return state


def adamw_step(params: list[Parameter], state: OptimizerState) -> None:
    state.step += 1
    k = state.step
    bc1 = 1.0 - state.beta1 ** k
    bc2 = 1.0 - state.beta2 ** k
    for p in params:
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None or m.shape != p.data.shape:
            raise ContractViolation(f"optimizer state mismatch for {p.name!r}")
        g = p.grad
        if state.weight_decay:
            p.data *= 1.0 - state.learning_rate * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)

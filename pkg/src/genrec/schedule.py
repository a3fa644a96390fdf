"""Variance schedule and closed-form forward / posterior quantities.

All coefficient arrays are float64 and 1-indexed by diffusion step t; index 0
is a sentinel so that the cumulative product starts at exactly 1. The
noising closed form and the posterior mean/variance are

    x_t           = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps
    mean(x0, xt)  = [sqrt(abar_{t-1}) b_t / (1 - abar_t)] x0
                    + [sqrt(a_t) (1 - abar_{t-1}) / (1 - abar_t)] xt
    var_t         = (1 - abar_{t-1}) / (1 - abar_t) * b_t

`q_sample` and `posterior_mean` accept either plain ndarrays or graph
Tensors, and scalar or per-row integer steps; coefficients are cast to the
operand dtype so float32 graphs stay float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .tensor import Tensor

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class Schedule:
    total_steps: int
    beta: np.ndarray        # beta[1..T]; beta[0] = 0 sentinel
    alpha: np.ndarray       # 1 - beta; alpha[0] = 1
    alpha_bar: np.ndarray   # running product; alpha_bar[0] = 1
    beta_tilde: np.ndarray  # posterior variance; beta_tilde[1] = 0


def build_schedule(total_steps: int, beta_start: float = DEFAULT_BETA_START,
                   beta_end: float = DEFAULT_BETA_END) -> Schedule:
    """Linearly spaced variances from beta_start to beta_end inclusive."""
    if total_steps < 1:
        raise ContractViolation("total_steps must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ContractViolation("require 0 < beta_start <= beta_end < 1")
    T = int(total_steps)
    beta = np.zeros(T + 1, dtype=np.float64)
    beta[1:] = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.empty(T + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    running = 1.0
    for t in range(1, T + 1):
        running *= alpha[t]
        alpha_bar[t] = running
    beta_tilde = np.zeros(T + 1, dtype=np.float64)
    beta_tilde[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    return Schedule(T, beta, alpha, alpha_bar, beta_tilde)


def _check_t(t, T: int) -> np.ndarray:
    t = np.asarray(t)
    if t.size == 0 or t.min() < 1 or t.max() > T:
        raise ContractViolation(f"step index out of range [1, {T}]")
    return t


def _coef(values: np.ndarray, x) -> np.ndarray:
    """Reshape per-row coefficients to broadcast against x and match dtype."""
    dtype = x.data.dtype if isinstance(x, Tensor) else np.asarray(x).dtype
    v = np.asarray(values, dtype=dtype)
    ndim = x.data.ndim if isinstance(x, Tensor) else np.asarray(x).ndim
    if v.ndim and ndim > v.ndim:
        v = v.reshape(v.shape + (1,) * (ndim - v.ndim))
    return v


def q_sample(x0, t, eps, sched: Schedule):
    """Noised sample at step t of the forward process."""
    t = _check_t(t, sched.total_steps)
    a = _coef(np.sqrt(sched.alpha_bar[t]), x0)
    b = _coef(np.sqrt(1.0 - sched.alpha_bar[t]), x0)
    return a * x0 + b * eps


def posterior_mean(x0, xt, t, sched: Schedule):
    """Mean of the forward-process posterior q(x_{t-1} | x_t, x_0)."""
    t = _check_t(t, sched.total_steps)
    denom = 1.0 - sched.alpha_bar[t]
    c0 = np.sqrt(sched.alpha_bar[t - 1]) * sched.beta[t] / denom
    ct = np.sqrt(sched.alpha[t]) * (1.0 - sched.alpha_bar[t - 1]) / denom
    return _coef(c0, x0) * x0 + _coef(ct, xt) * xt


def posterior_sigma(t, sched: Schedule) -> np.ndarray:
    """Standard deviation sqrt(beta_tilde_t) of the posterior."""
    t = _check_t(t, sched.total_steps)
    return np.sqrt(sched.beta_tilde[t])


def eps_param_mean(x0_hat, xt, t, sched: Schedule):
    """Posterior mean via the noise parameterization.

    Infers eps_hat = (xt - sqrt(abar_t) x0_hat) / sqrt(1 - abar_t) and
    evaluates mean = (xt - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(a_t).
    Algebraically identical to posterior_mean(x0_hat, xt, t); kept as an
    independently coded route for the equivalence checks.
    """
    t = _check_t(t, sched.total_steps)
    sqrt_ab = np.sqrt(sched.alpha_bar[t])
    sqrt_one_m = np.sqrt(1.0 - sched.alpha_bar[t])
    eps_hat = (xt - _coef(sqrt_ab, xt) * x0_hat) / _coef(sqrt_one_m, xt)
    coef = sched.beta[t] / sqrt_one_m
    return (xt - _coef(coef, xt) * eps_hat) / _coef(np.sqrt(sched.alpha[t]), xt)


def x0_param_mean(x0_hat, eps_hat, t, sched: Schedule):
    """Posterior mean via the clean-sample parameterization:
    sqrt(abar_{t-1}) x0_hat + sqrt(a_t) (1 - abar_{t-1}) / sqrt(1 - abar_t) eps_hat.
    """
    t = _check_t(t, sched.total_steps)
    c0 = np.sqrt(sched.alpha_bar[t - 1])
    ce = np.sqrt(sched.alpha[t]) * (1.0 - sched.alpha_bar[t - 1]) / np.sqrt(1.0 - sched.alpha_bar[t])
    return _coef(c0, x0_hat) * x0_hat + _coef(ce, eps_hat) * eps_hat

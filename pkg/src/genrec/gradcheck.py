"""Finite-difference verification of reverse-mode gradients.

Compares backward() gradients against central differences
(loss(p+h) - loss(p-h)) / 2h, coordinate by coordinate. The loss callable
must be deterministic (same value on repeated calls with unchanged
parameters); this is checked and violations raise DeterminismError.

Relative error for a coordinate is |fd - an| / max(|fd|, |an|, floor).
The floor keeps coordinates whose true gradient is far below the
finite-difference noise level from dominating the report; defaults are
calibrated per dtype (float64 uses 1e-10, float32 uses 1e-2 because the
forward pass itself carries ~1e-7 relative rounding).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import rng
from .errors import DeterminismError
from .tensor import Parameter, Tensor, backward, zero_gradients

_DEFAULT_FLOOR = {np.dtype(np.float32): 1e-2, np.dtype(np.float64): 1e-10}


@dataclass
class CoordinateCheck:
    param: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    checks: list[CoordinateCheck]

    @property
    def max_rel_err(self) -> float:
        return max((c.rel_err for c in self.checks), default=0.0)

    def worst(self, n: int = 10) -> list[CoordinateCheck]:
        return self.checks[:n]


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
               h: float = 1e-3, *, coords_per_param: int | None = None,
               seed: int = 0, rel_floor: float | None = None) -> GradCheckReport:
    """Check d(loss)/d(param) for every (or a sampled subset of) coordinate.

    `coords_per_param` limits the number of coordinates probed per parameter
    (sampled from a seeded stream); None probes all of them.
    """
    if h <= 0:
        raise ValueError("perturbation h must be positive")
    v1 = float(loss_fn().data)
    v2 = float(loss_fn().data)
    if v1 != v2:
        raise DeterminismError(f"loss_fn not deterministic: {v1!r} != {v2!r}")

    zero_gradients(params)
    backward(loss_fn(), params)
    analytic = {p.name: p.grad.copy() for p in params}
    zero_gradients(params)

    checks: list[CoordinateCheck] = []
    for pi, p in enumerate(params):
        floor = rel_floor if rel_floor is not None else _DEFAULT_FLOOR[p.data.dtype]
        n = p.data.size
        if coords_per_param is not None and coords_per_param < n:
            g = rng.stream(seed, rng.GRADCHECK, pi)
            flat_ids = g.choice(n, size=coords_per_param, replace=False)
        else:
            flat_ids = np.arange(n)
        flat = p.data.reshape(-1)
        for fi in flat_ids:
            orig = flat[fi]
            plus = np.asarray(float(orig) + h, dtype=p.data.dtype)
            minus = np.asarray(float(orig) - h, dtype=p.data.dtype)
            flat[fi] = plus
            lp = float(loss_fn().data)
            flat[fi] = minus
            lm = float(loss_fn().data)
            flat[fi] = orig
            # Use the representable step actually applied, not nominal 2h.
            fd = (lp - lm) / (float(plus) - float(minus))
            an = float(analytic[p.name].reshape(-1)[fi])
            denom = max(abs(fd), abs(an), floor)
            rel = abs(fd - an) / denom
            checks.append(CoordinateCheck(p.name, np.unravel_index(int(fi), p.data.shape),
                                          an, fd, rel))
    checks.sort(key=lambda c: c.rel_err, reverse=True)
    return GradCheckReport(checks)

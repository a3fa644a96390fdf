"""Dense tensors with reverse-mode differentiation over a closed primitive set.

The differentiable surface is deliberately small and enumerated; there is no
general autodiff of arbitrary code. Supported primitives:

    add, mul (elementwise, numpy broadcasting), matmul, gelu, softplus,
    softmax (last axis), layer_norm (last axis, no affine), gather (row
    lookup by integer ids), take_positions (one row per batch element),
    mask_fill (replace masked entries by a constant), concat, reshape,
    swapaxes, sum, mean.

Conventions:
  - Tensors are float32 (training precision) or float64 (verification).
    Binary ops require matching dtypes; python/ndarray constants are cast
    to the tensor operand's dtype.
  - Reductions that produce a scalar accumulate and return float64
    regardless of input dtype, so that loss values are accurate enough for
    finite-difference comparison; their backward casts the incoming
    gradient back to the input dtype.
  - `backward(loss, params)` accumulates into Parameter.grad; callers zero
    gradients between steps.
  - Tensors are immutable values; sharing across threads is safe. Gradient
    recording is controlled per-thread via `no_grad()`.
"""

from __future__ import annotations

import threading
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation, UnsupportedOpError

_ALLOWED_DTYPES = (np.float32, np.float64)

_SUPPORTED_OPS = frozenset({
    "leaf", "add", "mul", "matmul", "gelu", "softplus", "softmax",
    "layer_norm", "gather", "take_positions", "mask_fill", "concat",
    "reshape", "swapaxes", "sum", "mean",
})

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager disabling graph recording on the current thread."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_op", "_parents", "_backward", "_meta")

    # Defer to our reflected operators instead of numpy elementwise-on-object.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, *, dtype=None,
                 _op: str = "leaf", _parents: tuple = (), _backward=None, _meta=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._op = _op
        self._parents = _parents
        self._backward = _backward
        self._meta = _meta

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op!r})"

    # Operator sugar over the primitive set.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_const_like(self, other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self) -> float:
        if self.data.shape != ():
            raise ContractViolation("item() requires a scalar tensor")
        return float(self.data)


class Parameter(Tensor):
    """Named leaf tensor with a persistent gradient accumulator."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, *, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.data.dtype.name})"


def zero_gradients(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def _const_like(ref: Tensor, value) -> np.ndarray:
    """Cast a python scalar / ndarray constant to the reference dtype."""
    return np.asarray(value, dtype=ref.data.dtype)


def _coerce_pair(a, b):
    """Return (a, b) as Tensors with matching dtype; constants are cast."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        if a.data.dtype != b.data.dtype:
            raise ContractViolation(
                f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")
        return a, b
    if isinstance(a, Tensor):
        return a, Tensor(_const_like(a, b))
    if isinstance(b, Tensor):
        return Tensor(_const_like(b, a)), b
    raise ContractViolation("at least one operand must be a Tensor")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(data: np.ndarray, parents: tuple, op: str, backward, meta=None) -> Tensor:
    if _grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _op=op, _parents=parents,
                      _backward=backward, _meta=meta)
    return Tensor(data, _op="leaf", _meta=meta)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape).astype(a.data.dtype, copy=False), \
               _unbroadcast(g, b.shape).astype(b.data.dtype, copy=False)

    return _make(out, (a, b), "add", backward)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape).astype(a.data.dtype, copy=False), \
               _unbroadcast(g * a.data, b.shape).astype(b.data.dtype, copy=False)

    return _make(out, (a, b), "mul", backward)


def matmul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ContractViolation("matmul requires operands with ndim >= 2")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), "matmul", backward)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """Smooth nonlinearity (tanh form)."""
    xd = x.data
    inner = _GELU_C * (xd + _GELU_A * xd ** 3)
    th = np.tanh(inner)
    out = 0.5 * xd * (1.0 + th)

    def backward(g):
        sech2 = 1.0 - th * th
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * xd ** 2)
        dx = 0.5 * (1.0 + th) + 0.5 * xd * sech2 * dinner
        return ((g * dx).astype(xd.dtype, copy=False),)

    return _make(out.astype(xd.dtype, copy=False), (x,), "gelu", backward)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed stably."""
    xd = x.data
    out = np.logaddexp(_const_like(x, 0.0), xd)

    def backward(g):
        s = np.empty_like(xd)
        pos = xd >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
        ex = np.exp(xd[~pos])
        s[~pos] = ex / (1.0 + ex)
        return ((g * s).astype(xd.dtype, copy=False),)

    return _make(out.astype(xd.dtype, copy=False), (x,), "softplus", backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (numerically stable)."""
    xd = x.data
    z = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (out * g).sum(axis=-1, keepdims=True)
        return ((out * (g - dot)).astype(xd.dtype, copy=False),)

    return _make(out.astype(xd.dtype, copy=False), (x,), "softmax", backward)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (xd - mu) * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        dx = inv * (g - gm - y * gy)
        return (dx.astype(xd.dtype, copy=False),)

    return _make(y.astype(xd.dtype, copy=False), (x,), "layer_norm", backward)


def gather(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...]]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractViolation(
            f"gather ids out of range [0, {table.shape[0] - 1}]")
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(out, (table,), "gather", backward, meta=("ids", ids))


def take_positions(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select one position per batch row: out[b] = x[b, idx[b]]."""
    idx = np.asarray(idx)
    if x.data.ndim != 3 or idx.shape != (x.shape[0],):
        raise ContractViolation("take_positions expects x (B, L, d) and idx (B,)")
    rows = np.arange(x.shape[0])
    out = x.data[rows, idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        return (gx,)

    return _make(out, (x,), "take_positions", backward)


def mask_fill(x: Tensor, keep: np.ndarray, fill: float) -> Tensor:
    """Replace entries where keep is False by a constant (no gradient there)."""
    keep = np.asarray(keep, dtype=bool)
    out = np.where(keep, x.data, _const_like(x, fill))

    def backward(g):
        return (np.where(keep, g, 0.0).astype(x.data.dtype, copy=False),)

    return _make(out.astype(x.data.dtype, copy=False), (x,), "mask_fill", backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ContractViolation("concat of zero tensors")
    dt = parts[0].data.dtype
    if any(p.data.dtype != dt for p in parts):
        raise ContractViolation("concat requires matching dtypes")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, parts, "concat", backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), "reshape", backward)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    out = np.swapaxes(x.data, a, b)

    def backward(g):
        return (np.swapaxes(g, a, b),)

    return _make(out, (x,), "swapaxes", backward)


def _reduce(x: Tensor, axis, keepdims: bool, op: str) -> Tensor:
    xd = x.data
    # Scalar reductions accumulate in 64-bit (see module docstring).
    acc_dtype = np.float64 if axis is None else xd.dtype
    if op == "sum":
        out = xd.sum(axis=axis, keepdims=keepdims, dtype=acc_dtype)
        scale = 1.0
    else:
        out = xd.mean(axis=axis, keepdims=keepdims, dtype=acc_dtype)
        if axis is None:
            scale = 1.0 / xd.size
        else:
            scale = 1.0 / xd.shape[axis]

    def backward(g):
        if axis is None:
            gx = np.full_like(xd, g * scale)
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            gx = (np.broadcast_to(ge, xd.shape) * scale).astype(xd.dtype, copy=False)
        return (gx,)

    return _make(np.asarray(out), (x,), op, backward)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _reduce(x, axis, keepdims, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _reduce(x, axis, keepdims, "mean")


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def graph_nodes(root: Tensor) -> list[Tensor]:
    """All recorded nodes reachable from `root` (for structural inspection)."""
    return _topo_order(root)


def backward(loss: Tensor, params: Iterable[Parameter] | None = None) -> None:
    """Accumulate d(loss)/d(param) into Parameter.grad for every reachable leaf.

    Parameters not reachable from `loss` receive no contribution (their
    accumulated gradient is unchanged, i.e. exactly zero after a reset).
    """
    if loss.data.shape != ():
        raise ContractViolation("backward requires a scalar loss")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(1.0, dtype=loss.data.dtype)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter) or not node._parents:
            if isinstance(node, Parameter):
                node.grad += g.astype(node.data.dtype, copy=False)
            continue
        if node._op not in _SUPPORTED_OPS or node._backward is None:
            raise UnsupportedOpError(f"unsupported op in graph: {node._op!r}")
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad:
                continue
            acc = grads.get(id(p))
            if acc is None:
                grads[id(p)] = np.asarray(pg)
            else:
                grads[id(p)] = acc + pg
    # Validate caller-supplied params against the enumerated leaf contract.
    if params is not None:
        for p in params:
            if not isinstance(p, Parameter):
                raise ContractViolation("params must be Parameter instances")

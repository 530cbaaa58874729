"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array in one of two precisions: compute-grade
(float32, used for training/inference) or verification-grade (float64, used
by oracles and gradient checks).  Every differentiable operation records its
inputs and a backward rule on the produced tensor; ``backward`` replays the
recorded graph in reverse topological order, visiting each rule exactly once
and accumulating into ``.grad``.

All operations are pure: they never mutate their inputs and identical inputs
produce bit-identical outputs.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ShapeError

COMPUTE_DTYPE = np.float32
VERIFY_DTYPE = np.float64

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that disables graph recording (pure forward)."""

    def __enter__(self):
        _GRAD_ENABLED.append(False)
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED.pop()
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


class KinkMargins:
    """Distances to the nearest non-smooth point seen during a forward pass.

    Finite-difference checks are only valid away from kinks; recording the
    margins lets a test *prove* its evaluation point keeps every kink out of
    perturbation reach instead of hoping so.
    """

    __slots__ = ("enabled", "abs_margin", "kink_margin", "tie_margin")

    def __init__(self):
        self.enabled = False
        self.reset()

    def reset(self):
        self.abs_margin = np.inf   # |x| at abs()
        self.kink_margin = np.inf  # |x| at piecewise-linear activations
        self.tie_margin = np.inf   # top-2 gap at max selections

    def note_abs(self, x: np.ndarray):
        if self.enabled and x.size:
            self.abs_margin = min(self.abs_margin, float(np.min(np.abs(x))))

    def note_kink(self, x: np.ndarray):
        if self.enabled and x.size:
            self.kink_margin = min(self.kink_margin, float(np.min(np.abs(x))))

    def note_tie(self, gap: float):
        if self.enabled:
            self.tie_margin = min(self.tie_margin, float(gap))


KINK_MARGINS = KinkMargins()


class record_kink_margins:
    """Enable margin recording for the duration of a forward pass."""

    def __enter__(self):
        KINK_MARGINS.reset()
        KINK_MARGINS.enabled = True
        return KINK_MARGINS

    def __exit__(self, *exc):
        KINK_MARGINS.enabled = False
        return False


class Tensor:
    """n-dimensional real array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(VERIFY_DTYPE)
        if arr.size == 0:
            raise ShapeError("tensors must have at least one element per axis")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    def backward(self, seed: np.ndarray | None = None):
        backward(self, seed)

    # operator sugar; scalars are accepted on either side
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _coerce(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording the backward rule when tracking is on."""
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def accumulate(t: Tensor, g: np.ndarray):
    """Add a gradient contribution into ``t.grad``."""
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(out: Tensor, seed: np.ndarray | None = None):
    """Reverse-replay the recorded graph, running each rule exactly once."""
    if not out.requires_grad:
        raise ValueError("backward on a tensor that does not require grad")
    if seed is None:
        if out.data.size != 1:
            raise ShapeError("backward without a seed needs a scalar output")
        seed = np.ones_like(out.data)
    out.grad = np.asarray(seed, dtype=out.data.dtype)
    for node in reversed(_topo_order(out)):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(g, b.data.shape))

    return make_op(data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(-g, b.data.shape))

    return make_op(data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return make_op(data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            accumulate(a, -g)

    return make_op(-a.data, (a,), bw)


def abs_(a: Tensor) -> Tensor:
    KINK_MARGINS.note_abs(a.data)
    sign = np.sign(a.data)

    def bw(g):
        if a.requires_grad:
            accumulate(a, g * sign)

    return make_op(np.abs(a.data), (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bw(g):
        if a.requires_grad:
            accumulate(a, g * (0.5 / out_data))

    return make_op(out_data, (a,), bw)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(g):
        if a.requires_grad:
            accumulate(a, np.broadcast_to(g / n, a.data.shape))

    return make_op(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), bw)


def tensor_sum(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            accumulate(a, np.broadcast_to(g, a.data.shape))

    return make_op(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bw(g):
        if a.requires_grad:
            accumulate(a, g.reshape(a.data.shape))

    return make_op(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        if a.requires_grad:
            accumulate(a, g.transpose(inverse))

    return make_op(np.ascontiguousarray(a.data.transpose(axes)), (a,), bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis (the channel-split primitive)."""
    if start < 0 or start + length > a.data.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} "
            f"of shape {a.data.shape}"
        )
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] = g
            accumulate(a, full)

    return make_op(a.data[index].copy(), (a,), bw)


# ---------------------------------------------------------------------------
# activations


def gelu(a: Tensor) -> Tensor:
    """Exact erf-form GELU: x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def bw(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
            accumulate(a, g * (cdf + x * pdf))

    return make_op(x * cdf, (a,), bw)


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    KINK_MARGINS.note_kink(a.data)
    x = a.data
    out_data = np.where(x >= 0, x, slope * x)

    def bw(g):
        if a.requires_grad:
            accumulate(a, g * np.where(x >= 0, 1.0, slope).astype(x.dtype))

    return make_op(out_data.astype(x.dtype), (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # stable two-sided form
    pos = x >= 0
    z = np.exp(np.where(pos, -x, x))
    s = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)

    def bw(g):
        if a.requires_grad:
            accumulate(a, g * s * (1.0 - s))

    return make_op(s, (a,), bw)


def activation(a: Tensor, kind: str) -> Tensor:
    if kind == "gelu":
        return gelu(a)
    if kind == "leaky_relu":
        return leaky_relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ValueError(f"unknown activation kind {kind!r}")


# ---------------------------------------------------------------------------
# gradient checking


def gradcheck(f, tensors: Iterable[Tensor], eps: float = 1e-4) -> float:
    """Compare tape gradients of scalar ``f(*tensors)`` with central differences.

    Returns the maximum componentwise relative error, using the denominator
    max(|analytic|, |numeric|, 1e-8).  ``tensors`` must be verification-grade.
    """
    tensors = list(tensors)
    for t in tensors:
        if t.data.dtype != VERIFY_DTYPE:
            raise ValueError("gradcheck requires verification-grade (float64) tensors")
        t.requires_grad = True
        t.grad = None

    out = f(*tensors)
    if out.data.size != 1:
        raise ShapeError("gradcheck target must be scalar")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("function not finite at the evaluation point")
    backward(out)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    def eval_scalar() -> float:
        with no_grad():
            val = f(*tensors)
        v = float(val.data.reshape(-1)[0])
        if not math.isfinite(v):
            raise FloatingPointError("function not finite at a perturbed point")
        return v

    max_rel = 0.0
    for t, ana in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = eval_scalar()
            flat[i] = orig - eps
            fm = eval_scalar()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            denom = max(abs(ana_flat[i]), abs(num), 1e-8)
            rel = abs(ana_flat[i] - num) / denom
            if rel > max_rel:
                max_rel = rel
    return max_rel

"""Reverse-mode automatic differentiation on dense numpy arrays.

The engine trains small normalizing flows, so the op set is deliberately
narrow: dense matmul, broadcasted elementwise arithmetic, tanh/exp/log/square,
sum/mean reductions, max-shifted logsumexp/logsoftmax, concatenate/split and
permutation along the feature axis, transpose, reshape, and stop_gradient.

Values are `Node` objects wrapping a numpy array.  Building an expression
records a graph; calling :meth:`Node.backward` on a scalar result accumulates
gradients into ``.grad`` of every reachable node, visiting each node exactly
once in reverse topological order.  Any operation whose result contains NaN or
Inf raises :class:`NumericsError` instead of returning silently.

Precision is carried by the arrays themselves: float32 for training, float64
for verification (``grad_check`` requires float64 parameters).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Node",
    "NumericsError",
    "ShapeError",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "tanh",
    "exp",
    "log",
    "square",
    "asum",
    "amean",
    "logsumexp",
    "logsoftmax",
    "logsoftmax_at",
    "concat",
    "split",
    "transpose",
    "reshape",
    "permute_feature",
    "stop_gradient",
    "grad_check",
    "GradCheckReport",
]


class NumericsError(FloatingPointError):
    """An operation produced a non-finite value."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{what} produced non-finite values")
    return arr


class Node:
    """A value in the computation graph.

    ``value`` is a numpy array (float32 or float64), ``grad`` is filled by
    :meth:`backward` and is ``None`` until then.  Leaves are created directly
    from array-likes; interior nodes are created by the module-level ops and
    carry edges ``(parent, vjp)`` used during the backward sweep.
    """

    __slots__ = ("value", "grad", "_edges")

    def __init__(self, value, _edges=(), dtype=None, _what="node value"):
        arr = np.asarray(value, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        _check_finite(arr, _what)
        self.value: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self._edges: tuple = _edges

    # -- introspection -------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def T(self) -> "Node":
        return transpose(self)

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape}, dtype={self.value.dtype.name})"

    # -- operator sugar ------------------------------------------------------

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

    def __matmul__(self, other):
        return matmul(self, other)

    # -- backward ------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable node."""
        if self.value.size != 1:
            raise ShapeError(
                f"backward requires a scalar node, got shape {self.value.shape}"
            )
        topo: list[Node] = []
        seen: set[int] = set()
        stack: list[tuple[Node, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._edges:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node._edges:
                contrib = vjp(g)
                parent.grad = contrib if parent.grad is None else parent.grad + contrib


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x)


def _coerce_const(x, like: np.ndarray) -> np.ndarray:
    # Python scalars and lists adopt the partner's dtype; ndarrays keep theirs.
    if isinstance(x, np.ndarray):
        return x
    return np.asarray(x, dtype=like.dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- arithmetic --------------------------------------------------------------


def add(a, b) -> Node:
    av, bv = _val(a), _val(b)
    if isinstance(a, Node):
        bv = _coerce_const(b, av) if not isinstance(b, Node) else bv
    elif isinstance(b, Node):
        av = _coerce_const(a, bv)
    out = av + bv
    edges = []
    if isinstance(a, Node):
        edges.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Node):
        edges.append((b, lambda g: _unbroadcast(g, bv.shape)))
    return Node(out, tuple(edges), _what="add")


def sub(a, b) -> Node:
    av, bv = _val(a), _val(b)
    if isinstance(a, Node):
        bv = _coerce_const(b, av) if not isinstance(b, Node) else bv
    elif isinstance(b, Node):
        av = _coerce_const(a, bv)
    out = av - bv
    edges = []
    if isinstance(a, Node):
        edges.append((a, lambda g: _unbroadcast(g, av.shape)))
    if isinstance(b, Node):
        edges.append((b, lambda g: _unbroadcast(-g, bv.shape)))
    return Node(out, tuple(edges), _what="sub")


def mul(a, b) -> Node:
    av, bv = _val(a), _val(b)
    if isinstance(a, Node):
        bv = _coerce_const(b, av) if not isinstance(b, Node) else bv
    elif isinstance(b, Node):
        av = _coerce_const(a, bv)
    out = av * bv
    edges = []
    if isinstance(a, Node):
        edges.append((a, lambda g: _unbroadcast(g * bv, av.shape)))
    if isinstance(b, Node):
        edges.append((b, lambda g: _unbroadcast(g * av, bv.shape)))
    return Node(out, tuple(edges), _what="mul")


def neg(a) -> Node:
    av = _val(a)
    edges = ((a, lambda g: -g),) if isinstance(a, Node) else ()
    return Node(-av, edges, _what="neg")


def matmul(a, b) -> Node:
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {av.shape} @ {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {av.shape} @ {bv.shape}")
    out = av @ bv
    edges = []
    if isinstance(a, Node):
        edges.append((a, lambda g: g @ bv.T))
    if isinstance(b, Node):
        edges.append((b, lambda g: av.T @ g))
    return Node(out, tuple(edges), _what="matmul")


# -- elementwise nonlinearities ---------------------------------------------


def tanh(a) -> Node:
    av = _val(a)
    out = np.tanh(av)
    edges = ((a, lambda g: g * (1.0 - out * out)),) if isinstance(a, Node) else ()
    return Node(out, edges, _what="tanh")


def exp(a) -> Node:
    av = _val(a)
    with np.errstate(over="ignore"):
        out = np.exp(av)
    edges = ((a, lambda g: g * out),) if isinstance(a, Node) else ()
    return Node(out, edges, _what="exp")


def log(a) -> Node:
    av = _val(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    edges = ((a, lambda g: g / av),) if isinstance(a, Node) else ()
    return Node(out, edges, _what="log")


def square(a) -> Node:
    av = _val(a)
    edges = ((a, lambda g: g * (2.0 * av)),) if isinstance(a, Node) else ()
    return Node(av * av, edges, _what="square")


# -- reductions --------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def asum(a, axis=None, keepdims: bool = False) -> Node:
    """Sum reduction (named to avoid shadowing the builtin)."""
    av = _val(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    edges = ()
    if isinstance(a, Node):
        edges = ((a, lambda g: _expand_reduced(g, av.shape, axis, keepdims)),)
    return Node(out, edges, _what="sum")


def amean(a, axis=None, keepdims: bool = False) -> Node:
    av = _val(a)
    out = av.mean(axis=axis, keepdims=keepdims)
    count = av.size if axis is None else av.shape[axis]
    edges = ()
    if isinstance(a, Node):
        edges = (
            (a, lambda g: _expand_reduced(g, av.shape, axis, keepdims) / count),
        )
    return Node(out, edges, _what="mean")


def logsumexp(a, axis: int, keepdims: bool = False) -> Node:
    """Max-shifted log-sum-exp along `axis`; finite for inputs up to 1e4."""
    av = _val(a)
    if av.shape[axis] == 0:
        raise ShapeError("logsumexp over an empty axis")
    m = np.max(av, axis=axis, keepdims=True)
    e = np.exp(av - m)
    s = e.sum(axis=axis, keepdims=True)
    out_k = m + np.log(s)
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)
    edges = ()
    if isinstance(a, Node):
        soft = e / s

        def vjp(g):
            gk = g if keepdims else np.expand_dims(g, axis)
            return gk * soft

        edges = ((a, vjp),)
    return Node(out, edges, _what="logsumexp")


def logsoftmax(a, axis: int) -> Node:
    """Log-probabilities along `axis`; outputs are <= 0 and exp-sum to 1."""
    av = _val(a)
    if av.shape[axis] == 0:
        raise ShapeError("logsoftmax over an empty axis")
    m = np.max(av, axis=axis, keepdims=True)
    shifted = av - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    edges = ()
    if isinstance(a, Node):
        soft = np.exp(out)

        def vjp(g):
            return g - soft * g.sum(axis=axis, keepdims=True)

        edges = ((a, vjp),)
    return Node(out, edges, _what="logsoftmax")


def logsoftmax_at(a, index: int) -> Node:
    """Scalar log-probability of entry `index` of a 1-D vector."""
    av = _val(a)
    if av.ndim != 1:
        raise ShapeError(f"logsoftmax_at expects a 1-D vector, got {av.shape}")
    if not 0 <= index < av.shape[0]:
        raise IndexError(f"index {index} out of range for length {av.shape[0]}")
    onehot = np.zeros_like(av)
    onehot[index] = 1.0
    return asum(mul(logsoftmax(a, axis=0), onehot))


# -- structure ---------------------------------------------------------------


def concat(parts: Sequence, axis: int = -1) -> Node:
    values = [_val(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    ax = axis % out.ndim
    edges = []
    offset = 0
    for p, v in zip(parts, values):
        start, stop = offset, offset + v.shape[ax]
        offset = stop
        if isinstance(p, Node):
            sl = tuple(
                slice(start, stop) if i == ax else slice(None) for i in range(out.ndim)
            )
            edges.append((p, lambda g, sl=sl: g[sl]))
    return Node(out, tuple(edges), _what="concat")


def split(a, sections, axis: int = -1) -> list[Node]:
    """Split into equal `sections` (int) or at `sections` indices (list)."""
    av = _val(a)
    pieces = np.split(av, sections, axis=axis)
    ax = axis % av.ndim
    out: list[Node] = []
    offset = 0
    for piece in pieces:
        start, stop = offset, offset + piece.shape[ax]
        offset = stop
        edges = ()
        if isinstance(a, Node):
            sl = tuple(
                slice(start, stop) if i == ax else slice(None) for i in range(av.ndim)
            )

            def vjp(g, sl=sl):
                full = np.zeros_like(av)
                full[sl] = g
                return full

            edges = ((a, vjp),)
        out.append(Node(piece, edges, _what="split"))
    return out


def transpose(a) -> Node:
    av = _val(a)
    if av.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D operand, got {av.shape}")
    edges = ((a, lambda g: g.T),) if isinstance(a, Node) else ()
    return Node(av.T, edges, _what="transpose")


def reshape(a, shape) -> Node:
    av = _val(a)
    edges = ((a, lambda g: g.reshape(av.shape)),) if isinstance(a, Node) else ()
    return Node(av.reshape(shape), edges, _what="reshape")


def permute_feature(a, perm: np.ndarray) -> Node:
    """Reorder the last axis by a permutation; gradient scatters back."""
    av = _val(a)
    perm = np.asarray(perm)
    d = av.shape[-1]
    if sorted(perm.tolist()) != list(range(d)):
        raise ShapeError("permute_feature requires a permutation of the feature axis")
    inv = np.argsort(perm)
    edges = ((a, lambda g: g[..., inv]),) if isinstance(a, Node) else ()
    return Node(av[..., perm], edges, _what="permute_feature")


def stop_gradient(a) -> Node:
    """Identity forward; contributes no gradient to its input."""
    return Node(_val(a), (), _what="stop_gradient")


# -- verification ------------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    """Per-parameter comparison of reverse-mode vs central-difference grads."""

    entries: list[GradCheckEntry] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def ok(self) -> bool:
        return all(e.max_rel_err <= self.tol for e in self.entries)

    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.max_rel_err > self.tol]


def _rel_err(a: float, b: float) -> float:
    # Floored denominator: near-zero gradients are compared absolutely.
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def grad_check(
    f: Callable[[], Node],
    params: dict[str, Node] | Sequence[Node],
    h: float = 1e-4,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f()`` with central differences.

    ``f`` must rebuild its expression from the given parameter nodes on every
    call; finite differences mutate ``param.value`` in place and restore it.
    Parameters must be float64 so the h=1e-4 stencil is meaningful.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(f"param{i}", p) for i, p in enumerate(params)]
    for name, p in named:
        if p.value.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 parameters ({name})")

    for _, p in named:
        p.grad = None
    out = f()
    out.backward()
    analytic = {
        name: (np.zeros_like(p.value) if p.grad is None else p.grad.copy())
        for name, p in named
    }

    report = GradCheckReport(tol=tol)
    for name, p in named:
        flat = p.value.reshape(-1)
        worst = (0.0, (), 0.0, 0.0)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f().value)
            flat[i] = orig - h
            f_minus = float(f().value)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            ad = float(analytic[name].reshape(-1)[i])
            err = _rel_err(ad, fd)
            if err >= worst[0]:
                worst = (err, np.unravel_index(i, p.value.shape), ad, fd)
        report.entries.append(
            GradCheckEntry(
                name=name,
                max_rel_err=worst[0],
                worst_index=worst[1],
                analytic=worst[2],
                numeric=worst[3],
            )
        )
    return report

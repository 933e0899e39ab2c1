"""Minimal tape-based reverse-mode autodiff over float64 numpy arrays.

The op set is deliberately small: dense affine layers, LeakyReLU,
concatenation, elementwise arithmetic, row gathers, reductions, abs,
sqrt, square, and a hinge. Forward-mode directional derivatives are
built on top of these same ops (see :mod:`neuraluv.nets`), so losses
formed from Jacobian entries remain differentiable by the one reverse
sweep.

Gradient arrays are never mutated in place; accumulation always
allocates, which keeps pass-through gradients (e.g. from ``add``) safe
to share between parents.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "Tape",
    "Node",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "matmul_nt",
    "affine",
    "affine_leaky",
    "matmul_nt_masked",
    "leaky_relu",
    "hinge",
    "concat",
    "gather_rows",
    "slice_cols",
    "reshape",
    "reduce_sum",
    "reduce_mean",
    "absolute",
    "sqrt",
    "square",
]

ArrayLike = Union["Node", np.ndarray, float, int]


class Tape:
    """Ordered record of one forward evaluation.

    Nodes append themselves at creation, so list order is a topological
    order and one reversed sweep implements backpropagation. A tape can
    be swept exactly once.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.spent = False

    def leaf(self, value) -> "Node":
        """Register an input/parameter array whose gradient is wanted."""
        node = Node(value, tape=self)
        node.is_leaf = True
        return node


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "tape", "parents", "bwd", "grad", "is_leaf")

    def __init__(self, value, tape: Optional[Tape] = None, parents=(), bwd=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.parents = parents
        self.bwd = bwd
        self.grad: Optional[np.ndarray] = None
        self.is_leaf = False
        if tape is not None:
            tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, leaf={self.is_leaf})"


def value_of(x: ArrayLike) -> np.ndarray:
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _tape_of(*args) -> Optional[Tape]:
    tape = None
    for a in args:
        if isinstance(a, Node) and a.tape is not None:
            if tape is None:
                tape = a.tape
            elif tape is not a.tape:
                raise ValueError("operands recorded on different tapes")
    return tape


def _accum(node: ArrayLike, g: np.ndarray) -> None:
    if not isinstance(node, Node):
        return
    if node.grad is None:
        node.grad = g
    else:
        node.grad = node.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum-reduce a broadcast gradient back to the operand's shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(root: Node) -> None:
    """One reverse sweep from a scalar root; fills ``grad`` on leaves.

    Intermediate gradients are released as the sweep passes them. A
    second sweep over the same tape raises.
    """
    if not isinstance(root, Node) or root.tape is None:
        raise ValueError("backward root must be a recorded Node")
    if root.value.size != 1:
        raise ValueError("backward root must be scalar")
    tape = root.tape
    if tape.spent:
        raise RuntimeError("tape already swept; record a new tape")
    tape.spent = True
    root.grad = np.ones_like(root.value)
    for node in reversed(tape.nodes):
        if node.grad is None:
            continue
        if node.bwd is not None:
            node.bwd(node.grad)
        if not node.is_leaf:
            node.grad = None


def add(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    va, vb = value_of(a), value_of(b)
    tape = _tape_of(a, b)
    out = va + vb
    if tape is None:
        return out

    def bwd(g):
        _accum(a, _unbroadcast(g, va.shape))
        _accum(b, _unbroadcast(g, vb.shape))

    return Node(out, tape, (a, b), bwd)


def sub(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    va, vb = value_of(a), value_of(b)
    tape = _tape_of(a, b)
    out = va - vb
    if tape is None:
        return out

    def bwd(g):
        _accum(a, _unbroadcast(g, va.shape))
        _accum(b, _unbroadcast(-g, vb.shape))

    return Node(out, tape, (a, b), bwd)


def mul(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    va, vb = value_of(a), value_of(b)
    tape = _tape_of(a, b)
    out = va * vb
    if tape is None:
        return out

    def bwd(g):
        _accum(a, _unbroadcast(g * vb, va.shape))
        _accum(b, _unbroadcast(g * va, vb.shape))

    return Node(out, tape, (a, b), bwd)


def div(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    va, vb = value_of(a), value_of(b)
    tape = _tape_of(a, b)
    out = va / vb
    if tape is None:
        return out

    def bwd(g):
        _accum(a, _unbroadcast(g / vb, va.shape))
        _accum(b, _unbroadcast(-g * va / (vb * vb), vb.shape))

    return Node(out, tape, (a, b), bwd)


def neg(a: ArrayLike) -> ArrayLike:
    va = value_of(a)
    tape = _tape_of(a)
    if tape is None:
        return -va

    def bwd(g):
        _accum(a, -g)

    return Node(-va, tape, (a,), bwd)


def matmul(a: ArrayLike, b: ArrayLike) -> ArrayLike:
    va, vb = value_of(a), value_of(b)
    tape = _tape_of(a, b)
    out = va @ vb
    if tape is None:
        return out

    def bwd(g):
        _accum(a, g @ vb.T)
        _accum(b, va.T @ g)

    return Node(out, tape, (a, b), bwd)


def matmul_nt(a: ArrayLike, w: ArrayLike) -> ArrayLike:
    """a @ w.T for (out, in)-layout weight matrices."""
    va, vw = value_of(a), value_of(w)
    tape = _tape_of(a, w)
    out = va @ vw.T
    if tape is None:
        return out

    def bwd(g):
        _accum(a, g @ vw)
        _accum(w, g.T @ va)

    return Node(out, tape, (a, w), bwd)


def affine(x: ArrayLike, w: ArrayLike, b: ArrayLike) -> ArrayLike:
    """Dense layer x @ w.T + b with (out, in) weights and (out,) bias."""
    vx, vw, vb = value_of(x), value_of(w), value_of(b)
    tape = _tape_of(x, w, b)
    out = vx @ vw.T + vb
    if tape is None:
        return out

    def bwd(g):
        _accum(x, g @ vw)
        _accum(w, g.T @ vx)
        _accum(b, g.sum(axis=0))

    return Node(out, tape, (x, w, b), bwd)


def affine_leaky(x: ArrayLike, w: ArrayLike, b: ArrayLike,
                 slope: float = 0.01):
    """Fused dense layer + LeakyReLU; returns (output, derivative mask).

    The pre-activation buffer is reused for the activation output, which
    matters on memory-bandwidth-bound hosts.
    """
    vx, vw, vb = value_of(x), value_of(w), value_of(b)
    tape = _tape_of(x, w, b)
    pre = vx @ vw.T
    pre += vb
    mask = leaky_relu_mask(pre, slope)
    pre *= mask  # pre-activation is only ever read through the mask
    out = pre
    if tape is None:
        return out, mask

    def bwd(g):
        gm = g * mask
        _accum(x, gm @ vw)
        _accum(w, gm.T @ vx)
        _accum(b, gm.sum(axis=0))

    return Node(out, tape, (x, w, b), bwd), mask


def matmul_nt_masked(t: ArrayLike, w: ArrayLike, mask: np.ndarray) -> ArrayLike:
    """(t @ w.T) * mask with the mask constant; one fused JVP layer."""
    vt, vw = value_of(t), value_of(w)
    tape = _tape_of(t, w)
    out = vt @ vw.T
    out *= mask
    if tape is None:
        return out

    def bwd(g):
        gm = g * mask
        _accum(t, gm @ vw)
        _accum(w, gm.T @ vt)

    return Node(out, tape, (t, w), bwd)


def leaky_relu(x: ArrayLike, slope: float = 0.01,
               mask: Optional[np.ndarray] = None) -> ArrayLike:
    """Piecewise-linear activation; the subgradient at 0 is taken as 1.

    ``mask`` lets a caller that already computed the derivative mask
    (see :func:`leaky_relu_mask`) avoid recomputing it.
    """
    vx = value_of(x)
    if mask is None:
        mask = leaky_relu_mask(vx, slope)
    out = vx * mask
    tape = _tape_of(x)
    if tape is None:
        return out

    def bwd(g):
        _accum(x, g * mask)

    return Node(out, tape, (x,), bwd)


def leaky_relu_mask(pre_activation: np.ndarray, slope: float = 0.01) -> np.ndarray:
    """Derivative mask of LeakyReLU at the given pre-activation values."""
    mask = (pre_activation >= 0.0).astype(np.float64)
    mask *= 1.0 - slope
    mask += slope
    return mask


def hinge(x: ArrayLike) -> ArrayLike:
    """max(0, x); the subgradient at 0 is taken as 0."""
    vx = value_of(x)
    out = np.maximum(vx, 0.0)
    tape = _tape_of(x)
    if tape is None:
        return out

    def bwd(g):
        _accum(x, g * (vx > 0.0))

    return Node(out, tape, (x,), bwd)


def concat(parts: Sequence[ArrayLike], axis: int = 1) -> ArrayLike:
    values = [value_of(p) for p in parts]
    tape = _tape_of(*parts)
    out = np.concatenate(values, axis=axis)
    if tape is None:
        return out
    widths = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(part, g[tuple(sl)])

    return Node(out, tape, tuple(parts), bwd)


def gather_rows(x: ArrayLike, idx: np.ndarray) -> ArrayLike:
    """Fancy row indexing x[idx]; scatter-adds on the way back."""
    vx = value_of(x)
    idx = np.asarray(idx)
    out = vx[idx]
    tape = _tape_of(x)
    if tape is None:
        return out

    def bwd(g):
        gx = np.zeros_like(vx)
        np.add.at(gx, idx, g)
        _accum(x, gx)

    return Node(out, tape, (x,), bwd)


def slice_cols(x: ArrayLike, start: int, stop: int) -> ArrayLike:
    vx = value_of(x)
    out = vx[:, start:stop]
    tape = _tape_of(x)
    if tape is None:
        return out

    def bwd(g):
        gx = np.zeros_like(vx)
        gx[:, start:stop] = g
        _accum(x, gx)

    return Node(out, tape, (x,), bwd)


def reduce_sum(x: ArrayLike, axis=None, keepdims: bool = False) -> ArrayLike:
    vx = value_of(x)
    out = vx.sum(axis=axis, keepdims=keepdims)
    tape = _tape_of(x)
    if tape is None:
        return out

    def bwd(g):
        _accum(x, _spread(g, vx.shape, axis, keepdims))

    return Node(out, tape, (x,), bwd)


def reduce_mean(x: ArrayLike, axis=None, keepdims: bool = False) -> ArrayLike:
    vx = value_of(x)
    out = vx.mean(axis=axis, keepdims=keepdims)
    count = vx.size if axis is None else np.prod(
        [vx.shape[a] for a in np.atleast_1d(axis)]
    )
    tape = _tape_of(x)
    if tape is None:
        return out

    def bwd(g):
        _accum(x, _spread(g, vx.shape, axis, keepdims) / count)

    return Node(out, tape, (x,), bwd)


def _spread(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).astype(np.float64, copy=True)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).astype(np.float64, copy=True)


def reshape(x: ArrayLike, shape) -> ArrayLike:
    vx = value_of(x)
    out = vx.reshape(shape)
    tape = _tape_of(x)
    if tape is None:
        return out

    def bwd(g):
        _accum(x, g.reshape(vx.shape))

    return Node(out, tape, (x,), bwd)


def absolute(x: ArrayLike) -> ArrayLike:
    vx = value_of(x)
    out = np.abs(vx)
    tape = _tape_of(x)
    if tape is None:
        return out

    def bwd(g):
        _accum(x, g * np.sign(vx))

    return Node(out, tape, (x,), bwd)


def sqrt(x: ArrayLike) -> ArrayLike:
    """Elementwise square root; gradient is clamped to 0 where x <= 0."""
    vx = value_of(x)
    out = np.sqrt(np.maximum(vx, 0.0))
    tape = _tape_of(x)
    if tape is None:
        return out
    safe = np.where(vx > 0.0, out, 1.0)
    positive = vx > 0.0

    def bwd(g):
        _accum(x, g * (0.5 * positive / safe))

    return Node(out, tape, (x,), bwd)


def square(x: ArrayLike) -> ArrayLike:
    vx = value_of(x)
    tape = _tape_of(x)
    if tape is None:
        return vx * vx

    def bwd(g):
        _accum(x, g * (2.0 * vx))

    return Node(vx * vx, tape, (x,), bwd)

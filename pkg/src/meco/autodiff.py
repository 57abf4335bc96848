"""Minimal tape-based reverse-mode automatic differentiation.

Every primitive below is *polymorphic*: called on plain numpy arrays it just
computes the value; called with at least one :class:`Node` it records the
operation on that node's :class:`Tape`.  The vector-Jacobian rules are written
with the same primitives, so running the backward sweep with
``create_graph=True`` records the derivative computation itself and the result
can be differentiated again (double backprop).  This is what score matching
needs for the Hessian trace.

The primitive set is deliberately closed: arithmetic (add, sub, mul, div, neg),
``matmul``/``transpose``, reductions and shape plumbing (``sum``, ``sum_to``,
``broadcast_to``, ``reshape``, ``column``/``embed_column``), and the
elementwise nonlinearities ``exp``, ``log``, ``tanh``, ``sigmoid``,
``softplus``, ``swish`` and ``clip``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import weakref

import numpy as np
from scipy.special import expit

__all__ = [
    "Node",
    "Tape",
    "grad",
    "input_grad",
    "value_of",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "sum",
    "sum_to",
    "broadcast_to",
    "reshape",
    "column",
    "embed_column",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "softplus",
    "swish",
    "clip",
    "square",
    "mean",
]


class Node:
    """A value recorded on a tape, together with how it was produced."""

    __slots__ = ("tape", "value", "parents", "vjp", "requires_grad", "index", "name", "__weakref__")

    # make ndarray operators defer to Node's reflected methods
    __array_ufunc__ = None

    def __init__(self, tape, value, parents=(), vjp=None, requires_grad=True, name=None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(weakref.ref(self))

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape}, index={self.index})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Tape:
    """Ordered record of primitive operations.

    Nodes are appended in creation order, which is a valid topological order.
    A first-order :func:`grad` call does not modify the tape, so one tape can
    be differentiated any number of times.  The tape only holds weak
    references: nodes live as long as something downstream of them does, so
    dropping the output frees the whole graph without waiting for the cycle
    collector.
    """

    def __init__(self):
        self.nodes: list[weakref.ref] = []

    def __len__(self):
        return len(self.nodes)

    def variable(self, value, name=None) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64), name=name)

    def constant(self, value, name=None) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64), requires_grad=False, name=name)


def value_of(x):
    return x.value if isinstance(x, Node) else x


def _tape_of(args):
    for a in args:
        if isinstance(a, Node):
            return a.tape
    return None


def _record(value, parents, vjp):
    tape = _tape_of(parents)
    if tape is None:
        return value
    requires = any(isinstance(p, Node) and p.requires_grad for p in parents)
    return Node(tape, value, tuple(parents), vjp if requires else None, requires)


def _shape(x):
    return np.shape(value_of(x))


# --------------------------------------------------------------------------
# shape plumbing


def sum_to(x, shape):
    """Sum ``x`` down to ``shape`` (inverse of numpy broadcasting)."""
    shape = tuple(shape)
    xv = value_of(x)
    if np.shape(xv) == shape:
        return x
    lead = np.ndim(xv) - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and np.shape(xv)[lead + i] != 1
    )
    out = np.sum(xv, axis=axes, keepdims=True)
    out = out.reshape(shape)
    src_shape = np.shape(xv)
    return _record(out, (x,), lambda g, o, a: (broadcast_to(g, src_shape),))


def broadcast_to(x, shape):
    shape = tuple(shape)
    xv = value_of(x)
    if np.shape(xv) == shape:
        return x
    src_shape = np.shape(xv)
    out = np.broadcast_to(xv, shape).copy()
    return _record(out, (x,), lambda g, o, a: (sum_to(g, src_shape),))


def reshape(x, shape):
    src_shape = _shape(x)
    out = np.reshape(value_of(x), shape)
    return _record(out, (x,), lambda g, o, a: (reshape(g, src_shape),))


def transpose(x):
    return _record(np.transpose(value_of(x)), (x,), lambda g, o, a: (transpose(g),))


def column(x, j):
    """Column ``j`` of a 2-D array, as a 1-D array."""
    width = _shape(x)[1]
    return _record(value_of(x)[:, j].copy(), (x,), lambda g, o, a: (embed_column(g, j, width),))


def embed_column(x, j, width):
    """Place a 1-D array as column ``j`` of an otherwise zero 2-D array."""
    xv = value_of(x)
    out = np.zeros((xv.shape[0], width))
    out[:, j] = xv
    return _record(out, (x,), lambda g, o, a: (column(g, j),))


# --------------------------------------------------------------------------
# arithmetic


def add(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _record(av + bv, (a, b), lambda g, o, x, y: (sum_to(g, sa), sum_to(g, sb)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _record(av - bv, (a, b), lambda g, o, x, y: (sum_to(g, sa), neg(sum_to(g, sb))))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _record(av * bv, (a, b), lambda g, o, x, y: (sum_to(mul(g, y), sa), sum_to(mul(g, x), sb)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    sa, sb = np.shape(av), np.shape(bv)

    def vjp(g, o, x, y):
        ga = div(g, y)
        return sum_to(ga, sa), neg(sum_to(mul(ga, o), sb))

    return _record(av / bv, (a, b), vjp)


def neg(a):
    return _record(-value_of(a), (a,), lambda g, o, x: (neg(g),))


def square(a):
    return mul(a, a)


def matmul(a, b):
    """Matrix product of two 2-D arrays."""
    av, bv = value_of(a), value_of(b)
    if np.ndim(av) != 2 or np.ndim(bv) != 2:
        raise ValueError(f"matmul expects 2-D operands, got shapes {np.shape(av)} and {np.shape(bv)}")
    return _record(av @ bv, (a, b), lambda g, o, x, y: (matmul(g, transpose(y)), matmul(transpose(x), g)))


def sum(a, axis=None):  # noqa: A001 - mirrors numpy
    av = value_of(a)
    src_shape = np.shape(av)
    out = np.sum(av, axis=axis)
    if axis is None:

        def vjp(g, o, x):
            return (broadcast_to(reshape(g, (1,) * len(src_shape)), src_shape),)

    else:
        kept = list(src_shape)
        kept[axis] = 1

        def vjp(g, o, x):
            return (broadcast_to(reshape(g, tuple(kept)), src_shape),)

    return _record(np.asarray(out, dtype=np.float64), (a,), vjp)


def mean(a, axis=None):
    n = np.size(value_of(a)) if axis is None else np.shape(value_of(a))[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


# --------------------------------------------------------------------------
# elementwise nonlinearities


def exp(a):
    return _record(np.exp(value_of(a)), (a,), lambda g, o, x: (mul(g, o),))


def log(a):
    return _record(np.log(value_of(a)), (a,), lambda g, o, x: (div(g, x),))


def tanh(a):
    return _record(np.tanh(value_of(a)), (a,), lambda g, o, x: (mul(g, sub(1.0, mul(o, o))),))


def sigmoid(a):
    av = np.asarray(value_of(a), dtype=np.float64)
    return _record(expit(av), (a,), lambda g, o, x: (mul(g, mul(o, sub(1.0, o))),))


def softplus(a):
    av = value_of(a)
    return _record(np.logaddexp(0.0, av), (a,), lambda g, o, x: (mul(g, sigmoid(x)),))


def swish(a):
    """``a * sigmoid(a)`` (also known as SiLU)."""
    av = np.asarray(value_of(a), dtype=np.float64)
    s = expit(av)

    def vjp(g, o, x):
        if isinstance(x, Node):
            sx = sigmoid(x)
            return (mul(g, add(sx, mul(x, mul(sx, sub(1.0, sx))))),)
        return (mul(g, s * (1.0 + x * (1.0 - s))),)

    return _record(av * s, (a,), vjp)


def clip(a, lo, hi):
    """Clip to ``[lo, hi]``; the gradient is zero where clipping is active."""
    av = value_of(a)
    mask = ((av >= lo) & (av <= hi)).astype(np.float64)
    return _record(np.clip(av, lo, hi), (a,), lambda g, o, x: (mul(g, mask),))


# --------------------------------------------------------------------------
# reverse sweep


def grad(output: Node, wrt: Sequence[Node], create_graph: bool = False) -> list:
    """Gradients of the scalar ``output`` with respect to each node in ``wrt``.

    With ``create_graph=False`` the results are numpy arrays and the tape is
    left untouched.  With ``create_graph=True`` the backward computation is
    itself recorded and the results are nodes (or arrays, when a gradient does
    not depend on any variable) that can be differentiated again.

    A node that ``output`` does not depend on gets a zero gradient.
    """
    if not isinstance(output, Node):
        raise TypeError("output must be a Node recorded on a tape")
    if output.size != 1:
        raise ValueError(f"output must be a scalar, got shape {output.shape}")
    wrt = list(wrt)
    tape = output.tape
    adjoints: dict[int, object] = {output.index: np.ones_like(output.value)}
    wanted = {w.index for w in wrt}
    results: dict[int, object] = {}

    for ref in reversed(tape.nodes[: output.index + 1]):
        node = ref()
        if node is None:
            # unreachable from the output, so it carries no adjoint
            continue
        g = adjoints.pop(node.index, None)
        if g is None:
            continue
        if node.index in wanted:
            results[node.index] = g
        if node.vjp is None:
            continue
        if create_graph:
            contribs = node.vjp(g, node, *node.parents)
        else:
            contribs = node.vjp(value_of(g), node.value, *(value_of(p) for p in node.parents))
        for parent, c in zip(node.parents, contribs):
            if not (isinstance(parent, Node) and parent.requires_grad):
                continue
            prev = adjoints.get(parent.index)
            adjoints[parent.index] = c if prev is None else add(prev, c)

    out = []
    for w in wrt:
        g = results.get(w.index)
        if g is None:
            g = np.zeros_like(w.value)
        elif not create_graph:
            g = np.asarray(value_of(g), dtype=np.float64)
        out.append(g)
    return out


def input_grad(output: Node, x: Node, create_graph: bool = True):
    """``d output / d x`` kept differentiable by default, for second derivatives."""
    return grad(output, [x], create_graph=create_graph)[0]


def gradient_fn(fn: Callable, wrt_values: Iterable[np.ndarray]):
    """Evaluate ``fn`` on fresh tape variables and return ``(value, grads)``."""
    tape = Tape()
    nodes = [tape.variable(v) for v in wrt_values]
    out = fn(*nodes)
    return float(out.value), grad(out, nodes)

"""Reverse-mode automatic differentiation over dense float64 tensors.

A :class:`GradientTape` records every operation whose inputs include a
watched tensor; :meth:`GradientTape.backward` walks the records in reverse
and accumulates exact vector-Jacobian products. Only real arrays ever live
on the tape; complex quantities are handled by :mod:`mcwf.complex_ops` as
(real, imaginary) pairs of these tensors, which for the real-valued losses
used here is equivalent to Wirtinger calculus.

Tensors not created through a tape are constants: operations on them
evaluate eagerly in numpy and record nothing, so the same code path serves
both training and plain numerical use.

Broadcasting follows numpy's right-aligned rule; gradients of broadcast
operands are summed back to the operand shape.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import (
    DetachedTensor,
    DomainError,
    NotScalar,
    ShapeMismatch,
    TapeMismatch,
)

__all__ = [
    "Tensor",
    "GradientTape",
    "as_tensor",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "absolute",
    "log",
    "exp",
    "square",
    "sqrt",
    "sigmoid",
    "softplus",
    "cos",
    "sin",
    "tanh",
    "atan2",
    "matmul",
    "swap_last_axes",
    "reshape",
    "take_index",
    "tensor_sum",
    "tensor_mean",
    "custom_op",
]


class Tensor:
    """Dense float64 array, optionally recorded on a gradient tape.

    ``tape`` / ``tape_id`` are both None for constants. A tensor with no
    tape never receives a gradient.
    """

    __slots__ = ("data", "tape", "tape_id")

    def __init__(self, data, tape=None, tape_id=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.tape_id = tape_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f", tape_id={self.tape_id}" if self.tape is not None else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # arithmetic sugar; all dispatch to the module-level ops
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class _Node:
    """One recorded operation: output value, parent slots, and its VJP."""

    __slots__ = ("op", "parents", "value", "vjp", "is_leaf")

    def __init__(self, op, parents, value, vjp, is_leaf=False):
        self.op = op
        self.parents = parents  # tuple of tape ids, None for constant inputs
        self.value = value
        self.vjp = vjp
        self.is_leaf = is_leaf


class GradientTape:
    """Ordered record of operations; insertion order is topological."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaf_ids: list[int] = []

    def watch(self, data) -> Tensor:
        """Register a leaf variable and return its tracked tensor.

        The array is wrapped, not copied; mutating it after watching
        invalidates any gradients computed from it.
        """
        arr = data.data if isinstance(data, Tensor) else np.asarray(data, dtype=np.float64)
        node = _Node("leaf", (), arr, None, is_leaf=True)
        self.nodes.append(node)
        tid = len(self.nodes) - 1
        self._leaf_ids.append(tid)
        return Tensor(arr, tape=self, tape_id=tid)

    def _record(self, op, value, parent_ids, vjp) -> Tensor:
        self.nodes.append(_Node(op, parent_ids, value, vjp))
        return Tensor(value, tape=self, tape_id=len(self.nodes) - 1)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Accumulate d(loss)/d(leaf) for every watched leaf.

        Returns a map from ``tape_id`` to gradient array. Leaves the loss
        does not depend on get explicit zeros. Deterministic: a replayed
        identical forward pass yields bit-identical gradients.
        """
        if loss.tape is not self:
            raise DetachedTensor("loss is not recorded on this tape")
        if loss.size != 1:
            raise NotScalar(f"loss must be scalar, got shape {loss.shape}")

        grads: list = [None] * len(self.nodes)
        grads[loss.tape_id] = np.ones_like(self.nodes[loss.tape_id].value)

        for i in range(loss.tape_id, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            if node.is_leaf:
                continue
            for pid, pg in zip(node.parents, node.vjp(g)):
                if pid is None or pg is None:
                    continue
                if grads[pid] is None:
                    grads[pid] = pg
                else:
                    grads[pid] = grads[pid] + pg
            grads[i] = None  # free intermediate cotangents early

        out = {}
        for lid in self._leaf_ids:
            g = grads[lid]
            out[lid] = g if g is not None else np.zeros_like(self.nodes[lid].value)
        return out

    def first_nonfinite(self):
        """(op name, tape_id) of the first node with a non-finite value, or None."""
        for i, node in enumerate(self.nodes):
            if not np.all(np.isfinite(node.value)):
                return node.op, i
        return None


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _broadcast_check(sa, sb):
    try:
        return np.broadcast_shapes(sa, sb)
    except ValueError as e:
        raise ShapeMismatch(f"shapes {sa} and {sb} are not broadcastable") from e


def _unbroadcast(grad, shape):
    """Sum a gradient over broadcast dimensions back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _result(op, value, inputs, vjp) -> Tensor:
    """Wrap a forward value; record a node iff some input is tracked."""
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise TapeMismatch(f"operands of '{op}' live on different tapes")
    if tape is None:
        return Tensor(value)
    parent_ids = tuple(t.tape_id if t.tape is not None else None for t in inputs)
    return tape._record(op, value, parent_ids, vjp)


def custom_op(op, inputs, value, vjp) -> Tensor:
    """Record a hand-written operation (used for FFT-based nodes and linear algebra).

    ``vjp(g)`` must return one cotangent per input, aligned with ``inputs``;
    entries for constants may be None.
    """
    return _result(op, value, [as_tensor(x) for x in inputs], vjp)


# ---------------------------------------------------------------------------
# binary elementwise ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.shape, b.shape)
    value = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", value, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.shape, b.shape)
    value = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result("sub", value, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.shape, b.shape)
    value = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result("mul", value, (a, b), vjp)


def div(a, b, eps=0.0):
    """a / (b + eps). The caller supplies eps where b may reach zero;
    nothing is clamped silently."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.shape, b.shape)
    denom = b.data + eps
    value = a.data / denom

    def vjp(g):
        ga = g / denom
        gb = -g * a.data / (denom * denom)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result("div", value, (a, b), vjp)


def atan2(a, b):
    """Elementwise atan2(a, b); the four-quadrant angle of the point (b, a)."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a.shape, b.shape)
    value = np.arctan2(a.data, b.data)
    denom = a.data * a.data + b.data * b.data

    def vjp(g):
        ga = g * b.data / denom
        gb = -g * a.data / denom
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result("atan2", value, (a, b), vjp)


# ---------------------------------------------------------------------------
# unary elementwise ops


def neg(x):
    x = as_tensor(x)
    return _result("neg", -x.data, (x,), lambda g: (-g,))


def absolute(x):
    x = as_tensor(x)
    s = np.sign(x.data)  # 0 at exact ties, the documented l1 subgradient
    return _result("abs", np.abs(x.data), (x,), lambda g: (g * s,))


def log(x, eps=0.0):
    """Natural log of (x + eps); raises DomainError if any x + eps <= 0."""
    x = as_tensor(x)
    shifted = x.data + eps
    if np.any(shifted <= 0.0):
        raise DomainError("log received non-positive input outside the epsilon guard")
    value = np.log(shifted)

    def vjp(g):
        return (g / shifted,)

    return _result("log", value, (x,), vjp)


def exp(x):
    x = as_tensor(x)
    value = np.exp(x.data)
    return _result("exp", value, (x,), lambda g: (g * value,))


def square(x):
    x = as_tensor(x)
    return _result("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x, eps=0.0):
    """Square root of (x + eps); raises DomainError if any x + eps < 0."""
    x = as_tensor(x)
    shifted = x.data + eps
    if np.any(shifted < 0.0):
        raise DomainError("sqrt received negative input outside the epsilon guard")
    value = np.sqrt(shifted)

    def vjp(g):
        return (g / (2.0 * value),)

    return _result("sqrt", value, (x,), vjp)


def sigmoid(x):
    x = as_tensor(x)
    value = expit(x.data)
    return _result("sigmoid", value, (x,), lambda g: (g * value * (1.0 - value),))


def softplus(x):
    x = as_tensor(x)
    value = np.logaddexp(0.0, x.data)
    s = expit(x.data)
    return _result("softplus", value, (x,), lambda g: (g * s,))


def cos(x):
    x = as_tensor(x)
    return _result("cos", np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def sin(x):
    x = as_tensor(x)
    return _result("sin", np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def tanh(x):
    x = as_tensor(x)
    value = np.tanh(x.data)
    return _result("tanh", value, (x,), lambda g: (g * (1.0 - value * value),))


_UNARY = {
    "abs": absolute,
    "log": log,
    "exp": exp,
    "square": square,
    "sqrt": sqrt,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "cos": cos,
    "sin": sin,
    "tanh": tanh,
    "neg": neg,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "atan2": atan2}


def elementwise(op_kind, a, b=None, eps=0.0):
    """Dispatch an elementwise op by name.

    Unary kinds take only ``a``. ``eps`` is forwarded to the kinds that
    accept a zero guard (div, log, sqrt).
    """
    if op_kind in _BINARY:
        if b is None:
            raise ShapeMismatch(f"'{op_kind}' needs two operands")
        if op_kind == "div":
            return div(a, b, eps=eps)
        return _BINARY[op_kind](a, b)
    if op_kind in _UNARY:
        if b is not None:
            raise ShapeMismatch(f"'{op_kind}' takes one operand")
        if op_kind in ("log", "sqrt"):
            return _UNARY[op_kind](a, eps=eps)
        return _UNARY[op_kind](a)
    raise DomainError(f"unknown elementwise op '{op_kind}'")


# ---------------------------------------------------------------------------
# shape and reduction ops


def reshape(x, shape):
    x = as_tensor(x)
    try:
        value = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from e
    old_shape = x.shape
    return _result("reshape", value, (x,), lambda g: (g.reshape(old_shape),))


def swap_last_axes(x):
    """Transpose the trailing two axes (batched matrix transpose)."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeMismatch("swap_last_axes needs at least 2 dimensions")
    value = np.swapaxes(x.data, -1, -2)
    return _result("swapT", value, (x,), lambda g: (np.swapaxes(g, -1, -2),))


def take_index(x, index, axis):
    """Select one index along an axis (gather; adjoint scatters back)."""
    x = as_tensor(x)
    value = np.take(x.data, index, axis=axis)
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        out[tuple(sl)] = g
        return (out,)

    return _result("take", value, (x,), vjp)


def tensor_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    value = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result("sum", value, (x,), vjp)


def tensor_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= x.shape[ax]
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def matmul(a, b):
    """Batched matrix product over the trailing two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul operands need at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"inner dimensions differ: {a.shape} @ {b.shape}")
    _broadcast_check(a.shape[:-2], b.shape[:-2])
    value = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result("matmul", value, (a, b), vjp)

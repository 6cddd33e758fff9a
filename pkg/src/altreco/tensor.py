"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is intentionally small: 0-d/1-d/2-d arrays, elementwise
arithmetic, matmul, concat, the activations used by the networks and
full reductions.  Operations execute eagerly in numpy.  While a
``Tape`` is active (entered as a context manager) every op whose output
requires a gradient records a backward rule; ``Tape.backward`` then
walks the recorded ops once, in reverse order, accumulating gradients
into ``Tensor.grad`` buffers.

Tensors are treated as immutable after creation except for their grad
buffers.  A tape and the tensors recorded on it belong to one thread;
independent tapes may run concurrently in separate threads (the active
tape stack is thread-local).
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

# Inputs to log() are clamped to this floor so saturated probabilities
# produce large-but-bounded losses instead of infinities.
LOG_CLAMP = 1e-12

_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    """The innermost tape on this thread, or None outside any tape."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 array plus gradient metadata.

    ``data`` is the raw numpy buffer, ``requires_grad`` marks tensors
    whose gradient is wanted, and ``grad`` is filled by a backward pass
    (same shape as ``data``, or None before any backward).
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, cut off from any recorded graph."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, neg(other))
        return add(self, -float(other))

    def __rsub__(self, other):
        return add(neg(self), float(other))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)


class _Node:
    """One recorded operation: output, inputs and the backward rule.

    ``backward`` maps the upstream gradient (an ndarray shaped like the
    output) to one gradient ndarray (or None) per input.
    """

    __slots__ = ("output", "inputs", "backward", "name")

    def __init__(self, output: Tensor, inputs: tuple, backward: Callable, name: str):
        self.output = output
        self.inputs = inputs
        self.backward = backward
        self.name = name


class Tape:
    """Ordered record of operations for one reverse-mode pass.

    Operations append themselves in execution order, so the record is
    topologically sorted by construction.  ``backward`` consumes the
    tape; a consumed tape cannot run a second pass.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def _record(self, node: _Node) -> None:
        if self._consumed:
            raise ContractError("recording onto a consumed tape")
        self._nodes.append(node)

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into grad for every tensor that
        requires a gradient and is reachable from ``loss``."""
        if self._consumed:
            raise ContractError("backward on a consumed tape")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            upstream = node.output.grad
            if upstream is None:
                continue  # not on the path from the loss
            grads = node.backward(upstream)
            for inp, g in zip(node.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                if not all_finite(g):
                    raise NumericError(f"non-finite gradient produced by op '{node.name}'")
                # Gradient arrays are never mutated in place, so sharing
                # a buffer between two accumulators is safe.
                inp.grad = g if inp.grad is None else inp.grad + g
        self._nodes.clear()
        self._consumed = True


def all_finite(data: np.ndarray) -> bool:
    """Single-pass finiteness check: the sum is non-finite iff some
    element is (values here sit far below the float64 overflow edge, so
    the sum itself cannot overflow spuriously)."""
    return bool(np.isfinite(np.sum(data)))


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable, name: str) -> Tensor:
    """Wrap an eagerly computed result, validating finiteness and
    recording the backward rule on the active tape if needed."""
    if not all_finite(data):
        raise NumericError(f"non-finite values produced by op '{name}'")
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape._record(_Node(out, tuple(inputs), backward, name))
    return out


# ---------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum.  A 1-d right operand matching the column count
    of a 2-d left operand broadcasts across rows (the bias case)."""
    if not isinstance(b, Tensor):
        c = float(b)
        return _make(a.data + c, (a,), lambda g: (g,), "add_scalar")
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)), "add_bias")
    raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; the right operand may be a python scalar."""
    if not isinstance(b, Tensor):
        c = float(b)
        return _make(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def absolute(a: Tensor) -> Tensor:
    """Elementwise |x|; the subgradient at 0 is taken as 0."""
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


# ---------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-d tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), backward, "matmul")


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    """Concatenate two tensors along ``axis``; the backward rule splits
    the upstream gradient back to the inputs."""
    if a.data.ndim != b.data.ndim:
        raise DimensionError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    if axis < 0 or axis >= a.data.ndim:
        raise DimensionError(f"concat: axis {axis} out of range for shape {a.shape}")
    for ax in range(a.data.ndim):
        if ax != axis and a.shape[ax] != b.shape[ax]:
            raise DimensionError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    split = a.shape[axis]

    def backward(g):
        ga, gb = np.split(g, [split], axis=axis)
        return ga, gb

    return _make(np.concatenate([a.data, b.data], axis=axis), (a, b), backward, "concat")


# ---------------------------------------------------------------------
# activations and log
# ---------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly 0 is 0."""
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    """Numerically stable logistic function."""
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def log(a: Tensor) -> Tensor:
    """Natural log of the input clamped to [LOG_CLAMP, inf).

    Values below the clamp contribute a constant, so their gradient is
    zero; this bounds losses on saturated probabilities.
    """
    clamped = np.maximum(a.data, LOG_CLAMP)
    inv = np.where(a.data >= LOG_CLAMP, 1.0 / clamped, 0.0)
    return _make(np.log(clamped), (a,), lambda g: (g * inv,), "log")


# ---------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(
        np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum"
    )


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return _make(
        np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),), "mean"
    )

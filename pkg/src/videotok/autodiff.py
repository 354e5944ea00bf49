"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation records its parents and a vector-Jacobian closure on the
tensor it produces; ``backward`` on a scalar walks the resulting tape in
reverse topological order. All storage is float64: the desk-scale sizes
this library targets make precision cheaper than speed, and the
finite-difference gradient checks require it.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import NumericError

Array = np.ndarray

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A dense float64 array plus the tape bookkeeping for backprop.

    ``requires_grad`` marks participation in differentiation; it is
    inherited by results whose inputs participate. ``grad`` stays None
    until a backward pass (or accumulation) touches the tensor, so a
    tensor on no path to the loss reports an exactly-zero gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_spent")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _vjp: Callable[[Array], Sequence[Array | None]] | None = None,
        _copy: bool = True,
    ):
        # Public construction copies so the tensor owns its buffer; op
        # results pass _copy=False because they are freshly allocated.
        if _copy:
            self.data = np.array(data, dtype=np.float64)
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents = _parents
        self._vjp = _vjp
        self._spent = False

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def grad_or_zeros(self) -> Array:
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    # -- operators ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    def __radd__(self, other) -> "Tensor":
        return add(other, self)

    def __sub__(self, other) -> "Tensor":
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other) -> "Tensor":
        return add(other, neg(self))

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __getitem__(self, key) -> "Tensor":
        return take(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return swapaxes(self, a, b)

    def transpose_last(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> "Tape":
        return backward(self)


def as_tensor(value) -> Tensor:
    """Wrap plain arrays/scalars as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(data, rng: np.random.Generator | None = None) -> Tensor:
    """A leaf tensor that participates in differentiation."""
    del rng  # kept for call-site symmetry with initializer helpers
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


# -- tape -------------------------------------------------------------------


class Tape:
    """Topologically ordered record of every op reachable from one root.

    Ops are recorded on the tensors themselves at execution time; the tape
    materializes the ordering once, when a backward pass is requested.
    Iterating ``nodes`` in reverse visits children before parents.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        # Iterative DFS: recurrences build graphs deeper than the default
        # Python recursion limit.
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))

    def backward(self) -> None:
        """Seed the root with 1 and accumulate dRoot/dNode into ``grad``."""
        root = self.root
        if root.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {root.shape}"
            )
        if root._spent:
            raise RuntimeError(
                "tape already backpropagated; call reset() before replaying, "
                "otherwise gradients would silently accumulate"
            )
        root._spent = True
        root.grad = np.ones_like(root.data)
        for node in reversed(self.nodes):
            if node._vjp is None or node.grad is None:
                continue
            contributions = node._vjp(node.grad)
            for parent, contrib in zip(node._parents, contributions):
                if contrib is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(contrib, dtype=np.float64)
                else:
                    parent.grad = parent.grad + contrib

    def reset(self) -> None:
        """Zero every recorded gradient and re-arm the root for replay."""
        for node in self.nodes:
            node.grad = None
        self.root._spent = False


def backward(loss: Tensor) -> Tape:
    """Backpropagate from a scalar loss; returns the tape for inspection."""
    tape = Tape(loss)
    tape.backward()
    return tape


# -- broadcasting helpers ---------------------------------------------------


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp, _copy=False)
    return Tensor(data, _copy=False)


# -- primitive operations ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g: Array):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g: Array):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return _make(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise a**p for a constant float exponent."""
    a = as_tensor(a)
    p = float(exponent)
    out = a.data ** p

    def vjp(g: Array):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, (a,), vjp)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's stacked-matrix broadcasting.

    Both operands must have ndim >= 2; gradients are summed back over any
    broadcast batch axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(
            f"matmul expects matrices, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(
            f"matmul inner dimensions disagree: {a.shape} @ {b.shape}"
        )
    out = a.data @ b.data

    def vjp(g: Array):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g: Array):
        return (g.reshape(a.shape),)

    return _make(out, (a,), vjp)


def swapaxes(a: Tensor, axis_a: int, axis_b: int) -> Tensor:
    a = as_tensor(a)
    out = np.swapaxes(a.data, axis_a, axis_b)

    def vjp(g: Array):
        return (np.swapaxes(g, axis_a, axis_b),)

    return _make(out, (a,), vjp)


def take(a: Tensor, key) -> Tensor:
    """Basic indexing (ints, slices, tuples thereof) with gradient scatter."""
    a = as_tensor(a)
    out = a.data[key]

    def vjp(g: Array):
        full = np.zeros_like(a.data)
        full[key] += g
        return (full,)

    return _make(out, (a,), vjp)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g: Array):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return _make(out, tuple(parts), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    expanded = [reshape(p, p.shape[:axis] + (1,) + p.shape[axis:]) for p in parts]
    return concat(expanded, axis=axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g: Array):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis, computed with max-subtraction.

    Raises on non-finite input; on finite input every slice is in [0, 1]
    and sums to 1 up to roundoff.
    """
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax received non-finite input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g: Array):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), vjp)


def log_softmax(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericError("log_softmax received non-finite input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def vjp(g: Array):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _make(out, (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def vjp(g: Array):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return _make(out, (a,), vjp)

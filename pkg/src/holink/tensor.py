"""Minimal reverse-mode autodiff engine over float64 numpy arrays.

Every quantity the encoder computes (projections, attention, gates, losses)
is built from the primitives below, so gradients for all trainable weights
come out of a single `backward()` call on the scalar loss. Ops follow numpy
broadcasting; matrix ops act on the last two axes, which is what makes
batching a whole mini-batch of queries through one graph cheap.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericError",
    "as_tensor",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "slice_axis",
    "tsum",
    "tmean",
    "exp",
    "log",
    "cos",
    "sin",
    "sqrt",
    "relu",
    "sigmoid",
    "gelu",
    "activation",
    "clip",
    "softmax_rows",
    "layer_norm",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NumericError(ValueError):
    """Operand values are outside an op's numeric domain (NaN, etc.)."""


class Tensor:
    """Dense float64 array with optional gradient tracking.

    `grad` has the same shape as `values`. Leaf tensors created with
    ``requires_grad=True`` start with an all-zero grad, so parameters that
    never participate in a loss report zero gradients after `backward()`.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same values, no history; gradients do not flow past this point."""
        return Tensor(self.values)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0
        elif self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def backward(self):
        """Reverse-mode sweep from a scalar; accumulates grads into leaves."""
        if self.values.size != 1:
            raise ShapeError(
                f"backward() needs a scalar loss, got shape {self.values.shape}"
            )
        order = _toposort(self)
        self._seed_grad()
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def _seed_grad(self):
        if self.grad is None:
            self.grad = np.ones_like(self.values)
        else:
            self.grad = self.grad + np.ones_like(self.values)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.values.shape}{flag})"

    # arithmetic sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g.reshape(shape)


def _make(values: np.ndarray, parents, backward) -> Tensor:
    tracked = tuple(p for p in parents if p.requires_grad)
    out = Tensor(values)
    if tracked:
        out.requires_grad = True
        out.grad = None  # interior grads are allocated lazily in backward()
        out._parents = tracked
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# elementwise / broadcasting primitives
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.values.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.values.shape))

    return _make(a.values + b.values, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.values.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.values.shape))

    return _make(a.values - b.values, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.values, a.values.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.values, b.values.shape))

    return _make(a.values * b.values, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.values, a.values.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.values / (b.values**2), b.values.shape))

    return _make(a.values / b.values, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return _make(-a.values, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_values = np.exp(a.values)

    def backward(g):
        _accumulate(a, g * out_values)

    return _make(out_values, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g / a.values)

    return _make(np.log(a.values), (a,), backward)


def cos(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g * np.sin(a.values))

    return _make(np.cos(a.values), (a,), backward)


def sin(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g * np.cos(a.values))

    return _make(np.sin(a.values), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_values = np.sqrt(a.values)

    def backward(g):
        _accumulate(a, g * 0.5 / out_values)

    return _make(out_values, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0

    def backward(g):
        _accumulate(a, g * mask)

    return _make(np.where(mask, a.values, 0.0), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.values)

    def backward(g):
        _accumulate(a, g * s * (1.0 - s))

    return _make(s, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-CDF form: x * Phi(x), with Phi the standard normal CDF."""
    x = a.values
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        _accumulate(a, g * (cdf + x * pdf))

    return _make(x * cdf, (a,), backward)


def activation(kind: str, x: Tensor) -> Tensor:
    """Elementwise nonlinearity; kind is one of relu | gelu | sigmoid."""
    try:
        fn = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid}[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None
    return fn(x)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.values > lo) & (a.values < hi)

    def backward(g):
        _accumulate(a, g * inside)

    return _make(np.clip(a.values, lo, hi), (a,), backward)


# ---------------------------------------------------------------------------
# shape / reduction primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, with numpy batch broadcasting."""
    av, bv = a.values, b.values
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape))

    return _make(av @ bv, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""

    def backward(g):
        _accumulate(a, np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(a.values, -1, -2), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    original = a.values.shape

    def backward(g):
        _accumulate(a, g.reshape(original))

    return _make(a.values.reshape(shape), (a,), backward)


def concat(parts, axis: int) -> Tensor:
    """Join along one axis; other axes broadcast to a common shape first."""
    parts = [as_tensor(p) for p in parts]
    ndim = max(p.values.ndim for p in parts)
    axis = axis % ndim
    shapes = [(1,) * (ndim - p.values.ndim) + p.values.shape for p in parts]
    others = np.broadcast_shapes(*[s[:axis] + s[axis + 1:] for s in shapes])
    arrays, sizes = [], []
    for p, s in zip(parts, shapes):
        target = others[:axis] + (s[axis],) + others[axis:]
        arrays.append(np.broadcast_to(p.values.reshape(s), target))
        sizes.append(s[axis])
    values = np.concatenate(arrays, axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for part, piece in zip(parts, np.split(g, splits, axis=axis)):
            if part.requires_grad:
                _accumulate(part, _unbroadcast(piece, part.values.shape))

    return _make(values, parts, backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % a.values.ndim
    index = tuple(slice(None) if i != axis else slice(start, stop) for i in range(a.values.ndim))

    def backward(g):
        full = np.zeros_like(a.values)
        full[index] = g
        _accumulate(a, full)

    return _make(a.values[index], (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.values.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.values.shape).copy())

    return _make(a.values.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.values.size
    else:
        count = a.values.shape[axis]

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g / count, a.values.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg / count, a.values.shape).copy())

    return _make(a.values.mean(axis=axis, keepdims=keepdims), (a,), backward)


# ---------------------------------------------------------------------------
# composites used throughout the encoder
# ---------------------------------------------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis with max-subtraction.

    The shift is detached: softmax is invariant to adding a constant per
    row, so treating the max as a constant leaves gradients exact.
    """
    if np.isnan(x.values).any():
        raise NumericError("softmax_rows: input contains NaN")
    shift = np.max(x.values, axis=-1, keepdims=True)
    e = exp(sub(x, Tensor(shift)))
    return div(e, tsum(e, axis=-1, keepdims=True))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each row over the last axis, then apply the affine."""
    n = x.values.shape[-1]
    gain = as_tensor(gain)
    bias = as_tensor(bias)
    if gain.values.shape != (n,) or bias.values.shape != (n,):
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.values.shape}/{bias.values.shape} "
            f"do not match feature width {n}"
        )
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    normed = div(centered, sqrt(add(var, Tensor(eps))))
    return add(mul(normed, gain), bias)

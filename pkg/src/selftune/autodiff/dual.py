"""Dense float64 arrays carrying a directional derivative along one scalar.

A :class:`Dual` pairs a value with its tangent d(value)/dz, where z is the
single meta-parameter logit. ``tan is None`` stands for an exactly-zero
tangent and short-circuits every rule, so zero-tangent evaluation performs the
same floating point operations as plain numpy on the values.

Reverse-mode rules in :mod:`selftune.autodiff.tape` are written with these
functions, which is what makes gradients themselves carry tangents
(forward-over-reverse).
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from selftune.errors import ShapeError

Tensor = np.ndarray


def as_tensor(x) -> Tensor:
    return np.asarray(x, dtype=np.float64)


def _bshape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast shapes {shapes}") from exc


def _expand(tan, shape):
    if tan is None or tan.shape == shape:
        return tan
    return np.broadcast_to(tan, shape)


def _tadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


class Dual:
    """A value and its tangent with respect to the meta-parameter."""

    __slots__ = ("val", "tan")
    __array_priority__ = 100.0

    def __init__(self, val, tan=None):
        self.val = as_tensor(val)
        if tan is not None:
            tan = as_tensor(tan)
            if tan.shape != self.val.shape:
                raise ShapeError(f"tangent shape {tan.shape} != value shape {self.val.shape}")
        self.tan = tan

    @staticmethod
    def lift(x) -> "Dual":
        return x if isinstance(x, Dual) else Dual(x)

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def size(self):
        return self.val.size

    @property
    def tangent(self) -> Tensor:
        """Tangent materialized as an array (zeros when absent)."""
        return np.zeros_like(self.val) if self.tan is None else self.tan

    def primal(self) -> "Dual":
        return Dual(self.val)

    def __repr__(self):
        return f"Dual(val={self.val!r}, tan={self.tan!r})"

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
        return Dual(-self.val, None if self.tan is None else -self.tan)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return Dual(self.val[idx], None if self.tan is None else self.tan[idx])


def add(a, b) -> Dual:
    a, b = Dual.lift(a), Dual.lift(b)
    shape = _bshape(a.shape, b.shape)
    val = a.val + b.val
    return Dual(val, _tadd(_expand(a.tan, shape), _expand(b.tan, shape)))


def sub(a, b) -> Dual:
    a, b = Dual.lift(a), Dual.lift(b)
    shape = _bshape(a.shape, b.shape)
    val = a.val - b.val
    tb = None if b.tan is None else -_expand(b.tan, shape)
    return Dual(val, _tadd(_expand(a.tan, shape), tb))


def mul(a, b) -> Dual:
    a, b = Dual.lift(a), Dual.lift(b)
    _bshape(a.shape, b.shape)
    val = a.val * b.val
    ta = None if a.tan is None else a.tan * b.val
    tb = None if b.tan is None else a.val * b.tan
    return Dual(val, _expand(_tadd(ta, tb), val.shape))


def div(a, b) -> Dual:
    a, b = Dual.lift(a), Dual.lift(b)
    _bshape(a.shape, b.shape)
    val = a.val / b.val
    ta = None if a.tan is None else a.tan / b.val
    tb = None if b.tan is None else -val * b.tan / b.val
    return Dual(val, _expand(_tadd(ta, tb), val.shape))


def matmul(a, b) -> Dual:
    a, b = Dual.lift(a), Dual.lift(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    val = a.val @ b.val
    ta = None if a.tan is None else a.tan @ b.val
    tb = None if b.tan is None else a.val @ b.tan
    return Dual(val, _tadd(ta, tb))


def scale(a, c: float) -> Dual:
    a = Dual.lift(a)
    return Dual(a.val * c, None if a.tan is None else a.tan * c)


def exp(a) -> Dual:
    a = Dual.lift(a)
    val = np.exp(a.val)
    return Dual(val, None if a.tan is None else a.tan * val)


def log(a) -> Dual:
    a = Dual.lift(a)
    return Dual(np.log(a.val), None if a.tan is None else a.tan / a.val)


def sqrt(a) -> Dual:
    a = Dual.lift(a)
    val = np.sqrt(a.val)
    return Dual(val, None if a.tan is None else a.tan / (2.0 * val))


def square(a) -> Dual:
    a = Dual.lift(a)
    return Dual(a.val * a.val, None if a.tan is None else 2.0 * a.val * a.tan)


def power(a, k: float) -> Dual:
    a = Dual.lift(a)
    val = a.val**k
    return Dual(val, None if a.tan is None else k * a.val ** (k - 1) * a.tan)


def relu(a) -> Dual:
    a = Dual.lift(a)
    mask = a.val > 0
    return Dual(np.where(mask, a.val, 0.0), None if a.tan is None else np.where(mask, a.tan, 0.0))


def sigmoid(a) -> Dual:
    a = Dual.lift(a)
    s = expit(a.val)
    return Dual(s, None if a.tan is None else a.tan * s * (1.0 - s))


def log_softmax(a, axis: int = -1) -> Dual:
    a = Dual.lift(a)
    m = np.max(a.val, axis=axis, keepdims=True)
    shifted = a.val - m
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    val = shifted - lse
    if a.tan is None:
        return Dual(val)
    p = np.exp(val)
    return Dual(val, a.tan - np.sum(p * a.tan, axis=axis, keepdims=True))


def softmax(a, axis: int = -1) -> Dual:
    a = Dual.lift(a)
    shifted = a.val - np.max(a.val, axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / np.sum(e, axis=axis, keepdims=True)
    if a.tan is None:
        return Dual(p)
    return Dual(p, p * (a.tan - np.sum(p * a.tan, axis=axis, keepdims=True)))


def sum(a, axis=None, keepdims: bool = False) -> Dual:  # noqa: A001
    a = Dual.lift(a)
    val = np.sum(a.val, axis=axis, keepdims=keepdims)
    return Dual(val, None if a.tan is None else np.sum(a.tan, axis=axis, keepdims=keepdims))


def mean(a, axis=None, keepdims: bool = False) -> Dual:
    a = Dual.lift(a)
    val = np.mean(a.val, axis=axis, keepdims=keepdims)
    return Dual(val, None if a.tan is None else np.mean(a.tan, axis=axis, keepdims=keepdims))


def reshape(a, shape) -> Dual:
    a = Dual.lift(a)
    return Dual(a.val.reshape(shape), None if a.tan is None else a.tan.reshape(shape))


def transpose(a, axes=None) -> Dual:
    a = Dual.lift(a)
    return Dual(np.transpose(a.val, axes), None if a.tan is None else np.transpose(a.tan, axes))


def broadcast_to(a, shape) -> Dual:
    a = Dual.lift(a)
    shape = tuple(shape)
    val = np.broadcast_to(a.val, shape)
    return Dual(val, _expand(a.tan, shape))


def unbroadcast(a, shape) -> Dual:
    """Sum ``a`` down to ``shape`` (adjoint of broadcasting)."""
    a = Dual.lift(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and a.shape[i + lead] != 1
    )
    out = sum(a, axis=axes, keepdims=True)
    return reshape(out, shape)


def take_along_axis(a, idx: np.ndarray, axis: int = -1) -> Dual:
    a = Dual.lift(a)
    val = np.take_along_axis(a.val, idx, axis=axis)
    return Dual(val, None if a.tan is None else np.take_along_axis(a.tan, idx, axis=axis))


def put_along_axis_zeros(g, idx: np.ndarray, shape, axis: int = -1) -> Dual:
    """Scatter ``g`` into a zero array of ``shape`` at ``idx`` (adjoint of a gather)."""
    g = Dual.lift(g)

    def scatter(x):
        out = np.zeros(shape)
        np.put_along_axis(out, idx, x, axis=axis)
        return out

    return Dual(scatter(g.val), None if g.tan is None else scatter(g.tan))


def where(mask: np.ndarray, a, b) -> Dual:
    a, b = Dual.lift(a), Dual.lift(b)
    val = np.where(mask, a.val, b.val)
    if a.tan is None and b.tan is None:
        return Dual(val)
    return Dual(val, np.where(mask, a.tangent, b.tangent))


def linear_map(fn, a) -> Dual:
    """Apply a linear function to value and tangent alike."""
    a = Dual.lift(a)
    return Dual(fn(a.val), None if a.tan is None else fn(a.tan))


def is_finite(a: Dual) -> bool:
    if not np.all(np.isfinite(a.val)):
        return False
    return a.tan is None or bool(np.all(np.isfinite(a.tan)))

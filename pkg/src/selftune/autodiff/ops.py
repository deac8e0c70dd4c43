"""Differentiable primitives.

Every function accepts :class:`Var`, :class:`Dual` or plain arrays. When any
input is a Var the application is recorded on that Var's tape; otherwise the
result is a constant Dual (tangents still propagate).
"""
from __future__ import annotations

import functools

import numpy as np

from selftune.autodiff import dual as D
from selftune.autodiff.dual import Dual
from selftune.autodiff.tape import Var, record, value_of
from selftune.errors import ShapeError


def _check_broadcast(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ShapeError(f"incompatible shapes {shapes}") from exc


def add(a, b):
    av, bv = value_of(a), value_of(b)
    _check_broadcast(av.shape, bv.shape)
    out = D.add(av, bv)
    return record("add", out, (a, b), lambda g: (D.unbroadcast(g, av.shape), D.unbroadcast(g, bv.shape)))


def bias_add(x, b):
    return add(x, b)


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    _check_broadcast(av.shape, bv.shape)
    out = D.sub(av, bv)
    return record("sub", out, (a, b), lambda g: (D.unbroadcast(g, av.shape), D.unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    _check_broadcast(av.shape, bv.shape)
    out = D.mul(av, bv)
    return record(
        "mul",
        out,
        (a, b),
        lambda g: (D.unbroadcast(D.mul(g, bv), av.shape), D.unbroadcast(D.mul(g, av), bv.shape)),
    )


def div(a, b):
    av, bv = value_of(a), value_of(b)
    _check_broadcast(av.shape, bv.shape)
    out = D.div(av, bv)

    def vjp(g):
        ga = D.div(g, bv)
        gb = -D.div(D.mul(g, out), bv)
        return D.unbroadcast(ga, av.shape), D.unbroadcast(gb, bv.shape)

    return record("div", out, (a, b), vjp)


def neg(a):
    return record("neg", -value_of(a), (a,), lambda g: (-g,))


def scale(a, c: float):
    return record("scale", D.scale(value_of(a), c), (a,), lambda g: (D.scale(g, c),))


def matmul(a, b):
    """2-D matrix product."""
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul expects (n,k)@(k,m), got {av.shape} @ {bv.shape}")
    out = D.matmul(av, bv)

    def vjp(g):
        ga = D.matmul(g, D.transpose(bv)) if isinstance(a, Var) else None
        gb = D.matmul(D.transpose(av), g) if isinstance(b, Var) else None
        return ga, gb

    return record("matmul", out, (a, b), vjp)


def exp(a):
    out = D.exp(value_of(a))
    return record("exp", out, (a,), lambda g: (D.mul(g, out),))


def log(a):
    av = value_of(a)
    out = D.log(av)
    return record("log", out, (a,), lambda g: (D.div(g, av),))


def square(a):
    av = value_of(a)
    return record("square", D.square(av), (a,), lambda g: (D.scale(D.mul(g, av), 2.0),))


def relu(a):
    av = value_of(a)
    mask = av.val > 0
    return record("relu", D.relu(av), (a,), lambda g: (D.where(mask, g, 0.0),))


def sigmoid(a):
    out = D.sigmoid(value_of(a))
    return record("sigmoid", out, (a,), lambda g: (D.mul(g, D.mul(out, D.sub(1.0, out))),))


def softmax(a, axis: int = -1):
    out = D.softmax(value_of(a), axis=axis)

    def vjp(g):
        inner = D.sum(D.mul(g, out), axis=axis, keepdims=True)
        return (D.mul(out, D.sub(g, inner)),)

    return record("softmax", out, (a,), vjp)


def log_softmax(a, axis: int = -1):
    out = D.log_softmax(value_of(a), axis=axis)

    def vjp(g):
        p = D.exp(out)
        return (D.sub(g, D.mul(p, D.sum(g, axis=axis, keepdims=True))),)

    return record("log_softmax", out, (a,), vjp)


def sum(a, axis=None, keepdims: bool = False):  # noqa: A001
    av = value_of(a)
    out = D.sum(av, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = D.reshape(g, np.expand_dims(np.empty(out.shape), axis).shape)
        return (D.broadcast_to(g, av.shape),)

    return record("sum", out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False):
    av = value_of(a)
    n = av.size if axis is None else int(np.prod([av.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    av = value_of(a)
    out = D.reshape(av, shape)
    return record("reshape", out, (a,), lambda g: (D.reshape(g, av.shape),))


def gather(a, idx, axis: int = -1):
    """``take_along_axis`` with integer indices."""
    av = value_of(a)
    idx = np.asarray(idx)
    if idx.ndim != av.ndim:
        raise ShapeError(f"index rank {idx.ndim} != input rank {av.ndim}")
    if idx.size and (idx.min() < -av.shape[axis] or idx.max() >= av.shape[axis]):
        raise ShapeError("gather index out of range")
    out = D.take_along_axis(av, idx, axis=axis)
    return record("gather", out, (a,), lambda g: (D.put_along_axis_zeros(g, idx, av.shape, axis=axis),))


def stop_gradient(a):
    """Identity on values; zero adjoint and zero tangent."""
    return value_of(a).primal()


def detach(a) -> Dual:
    """Remove ``a`` from the tape but keep its meta-tangent.

    Used where a quantity must be constant for parameter gradients yet stay a
    function of the meta-parameter (advantages and TD targets of the inner loss).
    """
    return value_of(a)


@functools.lru_cache(maxsize=16)
def _shift_tensor(h: int, w: int, k: int) -> np.ndarray:
    """S[p, q, o] = 1 when input pixel p sits at kernel offset o of output pixel q."""
    p = k // 2
    s = np.zeros((h * w, h * w, k * k))
    for i in range(h):
        for j in range(w):
            for di in range(k):
                for dj in range(k):
                    ii, jj = i + di - p, j + dj - p
                    if 0 <= ii < h and 0 <= jj < w:
                        s[ii * w + jj, i * w + j, di * k + dj] = 1.0
    return s


def _dense_kernel(wk: np.ndarray, s: np.ndarray, c: int) -> np.ndarray:
    """(k*k*C, O) kernel -> (HW*C, HW*O) matrix acting on flattened images."""
    pix, kk = s.shape[0], s.shape[2]
    o = wk.shape[-1]
    full = np.tensordot(s, wk.reshape(kk, c, o), axes=([2], [0]))  # P, Q, C, O
    return full.transpose(0, 2, 1, 3).reshape(pix * c, pix * o)


def _kernel_grad(gfull: np.ndarray, s: np.ndarray, c: int) -> np.ndarray:
    """Adjoint of :func:`_dense_kernel`."""
    pix, kk = s.shape[0], s.shape[2]
    o = gfull.shape[1] // pix
    g = gfull.reshape(pix, c, pix, o)
    return np.tensordot(s, g, axes=([0, 1], [0, 2])).reshape(kk * c, o)


def conv2d(x, w, b=None):
    """'Same'-padded, stride-1 2-D convolution.

    x: (N, H, W, C) images; w: (k*k*C, O) with rows ordered (di, dj, c);
    b: (O,) bias. Returns (N, H, W, O). Small images are convolved as one
    dense product with the equivalent (HW*C, HW*O) matrix.
    """
    xv, wv = value_of(x), value_of(w)
    if xv.ndim != 4 or wv.ndim != 2:
        raise ShapeError(f"conv2d expects (N,H,W,C) and (k*k*C,O), got {xv.shape}, {wv.shape}")
    n, h, wd, c = xv.shape
    k = int(round(np.sqrt(wv.shape[0] / c)))
    if c * k * k != wv.shape[0] or k % 2 == 0:
        raise ShapeError(f"kernel rows {wv.shape[0]} incompatible with {c} input channels")
    o = wv.shape[1]
    s = _shift_tensor(h, wd, k)
    dense = D.linear_map(lambda t: _dense_kernel(t, s, c), wv)
    x2 = D.reshape(xv, (n, h * wd * c))
    out = D.reshape(D.matmul(x2, dense), (n, h, wd, o))

    def vjp(g):
        g2 = D.reshape(g, (n, h * wd * o))
        gx = gw = None
        if isinstance(x, Var):
            gx = D.reshape(D.matmul(g2, D.transpose(dense)), xv.shape)
        if isinstance(w, Var):
            gw = D.linear_map(lambda t: _kernel_grad(t, s, c), D.matmul(D.transpose(x2), g2))
        return gx, gw

    y = record("conv2d", out, (x, w), vjp)
    if b is not None:
        y = add(y, b)
    return y


__all__ = [
    "Var",
    "add",
    "bias_add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "matmul",
    "exp",
    "log",
    "square",
    "relu",
    "sigmoid",
    "softmax",
    "log_softmax",
    "sum",
    "mean",
    "reshape",
    "gather",
    "stop_gradient",
    "detach",
    "conv2d",
]

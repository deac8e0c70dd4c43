"""Reverse-mode differentiation over a recorded list of primitives.

Values flowing through the tape are :class:`~selftune.autodiff.dual.Dual`, and
every adjoint rule is written in dual arithmetic. Backpropagating a loss whose
inputs carry meta-tangents therefore yields gradients that carry
d(gradient)/dz as well.

Usage::

    tape = Tape()
    w = tape.watch(np.ones(3))
    loss = ops.sum(ops.square(w))
    grads = tape.gradient(loss, {"w": w})
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from selftune.autodiff import dual as D
from selftune.autodiff.dual import Dual
from selftune.errors import NumericalError, ShapeError, StateError

_ids = itertools.count()


class Var:
    """A tape node. Arithmetic operators dispatch to recorded primitives."""

    __slots__ = ("value", "tape", "id")
    __array_priority__ = 200.0

    def __init__(self, value: Dual, tape: "Tape"):
        self.value = value
        self.tape = tape
        self.id = next(_ids)

    @property
    def shape(self):
        return self.value.shape

    @property
    def val(self) -> np.ndarray:
        return self.value.val

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"

    def __add__(self, other):
        from selftune.autodiff import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from selftune.autodiff import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from selftune.autodiff import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from selftune.autodiff import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from selftune.autodiff import ops

        return ops.div(self, other)

    def __neg__(self):
        from selftune.autodiff import ops

        return ops.neg(self)

    def __matmul__(self, other):
        from selftune.autodiff import ops

        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from selftune.autodiff import ops

        return ops.matmul(other, self)


@dataclass
class Record:
    name: str
    inputs: tuple  # node id per input, None for constants
    output: int
    vjp: Callable[[Dual], tuple]


@dataclass
class Tape:
    """Ordered record of primitive applications (a computation record)."""

    records: list = field(default_factory=list)
    consumed: bool = False

    def watch(self, x) -> Var:
        """Register ``x`` as a differentiable leaf."""
        if self.consumed:
            raise StateError("tape already consumed by a backward pass")
        return Var(Dual.lift(x), self)

    def watch_tree(self, tree: dict) -> dict:
        return {k: self.watch(v) for k, v in tree.items()}

    def gradient(self, loss: Var, params):
        """d loss / d params for a dict (or list) of leaf Vars.

        Parameters that do not influence ``loss`` receive exact zeros.
        """
        if self.consumed:
            raise StateError("tape already consumed by a backward pass")
        if not isinstance(loss, Var) or loss.tape is not self:
            raise StateError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
        self.consumed = True
        adj = {loss.id: Dual(np.ones(loss.shape))}
        for rec in reversed(self.records):
            g = adj.pop(rec.output, None)
            if g is None:
                continue
            for node, ga in zip(rec.inputs, rec.vjp(g)):
                if node is None or ga is None:
                    continue
                prev = adj.get(node)
                adj[node] = ga if prev is None else D.add(prev, ga)

        def grad_of(v: Var) -> Dual:
            g = adj.get(v.id)
            if g is None:
                return Dual(np.zeros(v.shape))
            return g

        if isinstance(params, dict):
            return {k: grad_of(v) for k, v in params.items()}
        return [grad_of(v) for v in params]


def record(name: str, out: Dual, inputs: tuple, vjp: Callable[[Dual], tuple]):
    """Wrap ``out`` as a node if any input is a Var; otherwise return the constant."""
    if not D.is_finite(out):
        raise NumericalError(f"non-finite output from primitive '{name}'")
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            tape = x.tape
            break
    if tape is None:
        return out
    if tape.consumed:
        raise StateError("tape already consumed by a backward pass")
    node = Var(out, tape)
    ids = tuple(x.id if isinstance(x, Var) else None for x in inputs)
    tape.records.append(Record(name, ids, node.id, vjp))
    return node


def value_of(x) -> Dual:
    if isinstance(x, Var):
        return x.value
    return Dual.lift(x)

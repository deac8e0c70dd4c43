"""SGD, Adam and RMSProp over dicts of parameters.

Gradients may be :class:`Dual` values carrying d(grad)/dz. The moment
accumulators are always updated from gradient values only and enter the step
as constants, so the tangent of the new parameters is that of the algebraic
update alone.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from selftune.autodiff import dual as D
from selftune.autodiff.dual import Dual
from selftune.errors import ConfigError, NumericalError, ShapeError

KINDS = ("sgd", "adam", "rmsprop")


@dataclass
class OptimizerState:
    kind: str
    lr: float
    clip_norm: float | None = None
    b1: float = 0.9
    b2: float = 0.999
    decay: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    clip_scale: float = 1.0  # factor applied by the most recent clipped step

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in KINDS:
            raise ConfigError(f"optimizer kind must be one of {KINDS}, got '{self.kind}'")

    def copy(self) -> "OptimizerState":
        return copy.deepcopy(self)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(np.sum(Dual.lift(g).val ** 2) for g in grads.values())))


def optimizer_step(state: OptimizerState, params: dict, grads: dict, frozen_stats: dict | None = None):
    """One update; returns new params (Duals) and a new state. Inputs are not mutated.

    ``frozen_stats`` supplies the post-step second moments (and clip scale)
    instead of computing them from ``grads``; used to evaluate the update at a
    perturbed meta-parameter with the statistics held where the tangent treats
    them as constant.
    """
    if set(params) != set(grads):
        raise ShapeError("params and grads must have the same keys")
    grads = {k: Dual.lift(g) for k, g in grads.items()}
    for k, g in grads.items():
        if g.shape != np.shape(Dual.lift(params[k]).val):
            raise ShapeError(f"gradient for '{k}' has shape {g.shape}, param has {np.shape(params[k])}")
    new = state.copy()
    new.step += 1
    if state.clip_norm is not None:
        if frozen_stats is not None:
            factor = frozen_stats["clip_scale"]
        else:
            norm = global_norm(grads)
            factor = state.clip_norm / norm if norm > state.clip_norm else 1.0
        new.clip_scale = factor
        if factor != 1.0:
            grads = {k: D.scale(g, factor) for k, g in grads.items()}
    out = {}
    for k, g in grads.items():
        p = Dual.lift(params[k])
        if new.kind == "sgd":
            delta = D.scale(g, new.lr)
        elif new.kind == "rmsprop":
            v = new.decay * new.v.get(k, np.zeros(g.shape)) + (1 - new.decay) * g.val**2
            if frozen_stats is not None:
                v = frozen_stats["v"][k]
            new.v[k] = v
            delta = D.mul(g, new.lr / np.sqrt(v + new.eps))
        else:
            m_prev = new.m.get(k, np.zeros(g.shape))
            v = new.b2 * new.v.get(k, np.zeros(g.shape)) + (1 - new.b2) * g.val**2
            if frozen_stats is not None:
                v = frozen_stats["v"][k]
            m = D.add(new.b1 * m_prev, D.scale(g, 1 - new.b1))
            new.m[k], new.v[k] = m.val, v
            m_hat = D.scale(m, 1.0 / (1 - new.b1**new.step))
            v_hat = v / (1 - new.b2**new.step)
            delta = D.mul(m_hat, new.lr / (np.sqrt(v_hat) + new.eps))
        upd = D.sub(p, delta)
        if not D.is_finite(upd):
            raise NumericalError(f"non-finite update for '{k}'")
        out[k] = upd
    return out, new


def step_stats(state: OptimizerState) -> dict:
    """Statistics of the step that produced ``state``, for ``frozen_stats``."""
    return {"v": {k: v.copy() for k, v in state.v.items()}, "clip_scale": state.clip_scale}


def meta_update(state: OptimizerState, z: float, meta_grad: float) -> tuple[float, OptimizerState]:
    """Optimizer step on the scalar logit (descends ``meta_grad``)."""
    if not np.isfinite(meta_grad):
        raise NumericalError("non-finite meta-gradient")
    params, new = optimizer_step(state, {"z": np.float64(z)}, {"z": np.float64(meta_grad)})
    return float(params["z"].val), new

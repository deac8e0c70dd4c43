"""TD(lambda) advantages with terminal masking.

Works on plain arrays or Duals; with a dual ``gamma`` (or dual values) the
advantages carry their derivative with respect to the meta-parameter.
"""
from __future__ import annotations

import numpy as np

from selftune.autodiff import dual as D
from selftune.autodiff.dual import Dual
from selftune.errors import ShapeError


def gae_advantages(rewards, values, bootstrap_value, terminals, gamma, lam):
    """Return ``(advantages, value_targets)``, each shaped like ``rewards`` (B, T).

    delta_t = r_t + gamma * (1 - d_t) * V_{t+1} - V_t
    A_t     = delta_t + gamma * lam * (1 - d_t) * A_{t+1}
    """
    rewards = np.asarray(rewards, dtype=float)
    values = Dual.lift(values)
    bootstrap_value = Dual.lift(bootstrap_value)
    cont = 1.0 - np.asarray(terminals, dtype=float)
    if rewards.ndim != 2 or values.shape != rewards.shape or cont.shape != rewards.shape:
        raise ShapeError(f"rewards/values/terminals must share (B, T): {rewards.shape}, {values.shape}, {cont.shape}")
    if bootstrap_value.shape != rewards.shape[:1]:
        raise ShapeError(f"bootstrap_value must have shape {rewards.shape[:1]}")
    gamma = Dual.lift(gamma)
    if lam == 0:
        nxt = _stack([values[:, 1:], bootstrap_value[:, None]], axis=1, concat=True)
        advantages = D.sub(D.add(rewards, D.mul(D.mul(gamma, cont), nxt)), values)
        return advantages, D.add(advantages, values)
    gl = D.mul(gamma, lam)
    steps = rewards.shape[1]
    next_v = bootstrap_value
    acc = Dual(np.zeros(rewards.shape[0]))
    adv = [None] * steps
    for t in reversed(range(steps)):
        v_t = values[:, t]
        delta = D.sub(D.add(rewards[:, t], D.mul(D.mul(gamma, cont[:, t]), next_v)), v_t)
        acc = D.add(delta, D.mul(D.mul(gl, cont[:, t]), acc))
        adv[t] = acc
        next_v = v_t
    advantages = _stack(adv)
    return advantages, D.add(advantages, values)


def _stack(cols, axis: int = 1, concat: bool = False) -> Dual:
    join = np.concatenate if concat else np.stack
    val = join([c.val for c in cols], axis=axis)
    if all(c.tan is None for c in cols):
        return Dual(val)
    return Dual(val, join([c.tangent for c in cols], axis=axis))

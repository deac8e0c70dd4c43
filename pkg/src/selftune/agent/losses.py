"""Inner and outer actor-critic losses and the outer-critic TD loss.

Loss scale: every term is summed over time and averaged over the batch
(``reduction="sum_time"``), or averaged over both (``reduction="mean"``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from selftune.agent.gae import gae_advantages
from selftune.agent.networks import AgentParams, NetworkSpec, critic_forward, entropy_terms, policy_forward, policy_probs
from selftune.autodiff import dual as D
from selftune.autodiff import ops
from selftune.autodiff.dual import Dual
from selftune.autodiff.tape import Var, value_of
from selftune.envs.chain import NONE_SLOT, OBS_DIM, chain_values
from selftune.envs.rollout import TrajectoryBatch
from selftune.errors import ConfigError, DegenerateBatchError, NumericalError

VALUE_SOURCES = ("oracle", "inner_head", "outer_head")
REDUCTIONS = ("sum_time", "mean")


@dataclass(frozen=True)
class LossCoefs:
    """Hyperparameters of one actor-critic objective (gamma supplied separately)."""

    lam: float
    c_pg: float = 1.0
    c_td: float = 0.0
    c_en: float = 0.0
    baseline: bool = True


@dataclass
class LossAux:
    advantages: Dual
    weights: Dual
    entropy: float


def _denom(batch: TrajectoryBatch, reduction: str) -> float:
    if reduction == "sum_time":
        return float(batch.batch_size)
    if reduction == "mean":
        return float(batch.batch_size * batch.seq_len)
    raise ConfigError(f"reduction must be one of {REDUCTIONS}")


def chain_start_probs(policy: dict, spec: NetworkSpec) -> np.ndarray:
    start = np.zeros(OBS_DIM)
    start[NONE_SLOT] = 1.0
    return policy_probs(policy, start[None], spec)[0]


def _col_slice(x, start: int, stop: int):
    """Columns [start, stop) of a (B, T+1) Var or Dual."""
    n = value_of(x).shape[0]
    idx = np.broadcast_to(np.arange(start, stop), (n, stop - start))
    return ops.gather(x, idx, axis=1)


def compute_values(source: str, params: AgentParams, batch: TrajectoryBatch, spec: NetworkSpec, gamma=None) -> Dual:
    """State values for s_0..s_T, shape (B, T+1), off the tape.

    ``oracle`` evaluates the exact Discounting Chain value at ``gamma`` under the
    policy in ``params`` (tangents of a dual gamma are kept); the head sources
    evaluate the critic.
    """
    if source == "oracle":
        if gamma is None:
            raise ConfigError("oracle values need a discount")
        return chain_values(batch.value_obs(), chain_start_probs(params.policy, spec), gamma)
    if source in ("inner_head", "outer_head"):
        plain = params.map(value_of)
        inner, outer = critic_forward(plain, batch.value_obs(), spec)
        return value_of(inner if source == "inner_head" else outer)
    raise ConfigError(f"value source must be one of {VALUE_SOURCES}, got '{source}'")


def normalize_advantages(adv) -> Dual:
    """(A - mean) / std over the whole batch."""
    a = Dual.lift(adv)
    if a.size < 2:
        raise DegenerateBatchError("normalization needs at least two advantages")
    centered = D.sub(a, D.mean(a))
    std = D.sqrt(D.mean(D.square(centered)))
    if float(std.val) <= 1e-12:
        raise DegenerateBatchError("advantages have zero spread")
    return D.div(centered, std)


def actor_critic_loss(
    policy: dict,
    batch: TrajectoryBatch,
    spec: NetworkSpec,
    gamma,
    coefs: LossCoefs,
    values,
    critic_values=None,
    *,
    meta_advantages: bool,
    normalize: bool = False,
    reduction: str = "sum_time",
):
    """Policy-gradient + TD + entropy objective.

    values: (B, T+1) state values used for the advantages (held constant for
        parameter gradients).
    critic_values: (B, T) tape values regressed onto the TD(lambda) targets
        when ``coefs.c_td > 0``.
    meta_advantages: keep the advantages' meta-tangent (inner loss) or drop it
        entirely (outer loss).
    """
    n = _denom(batch, reduction)
    values = Dual.lift(values)
    t = batch.seq_len
    adv, targets = gae_advantages(
        batch.rewards, values[:, :t], values[:, t], batch.terminals, gamma, coefs.lam
    )
    if not meta_advantages:
        adv, targets = adv.primal(), targets.primal()
    weights = adv if coefs.baseline else D.add(adv, values[:, :t])
    if normalize:
        weights = normalize_advantages(weights)

    logp = policy_forward(policy, batch.obs, spec)
    logp_a = ops.reshape(ops.gather(logp, batch.actions[..., None], axis=-1), batch.actions.shape)
    loss = ops.scale(ops.sum(ops.mul(logp_a, weights)), -coefs.c_pg / n)
    ent = entropy_terms(logp)
    if coefs.c_en:
        loss = ops.add(loss, ops.scale(ops.sum(ent), -coefs.c_en / n))
    if coefs.c_td:
        if critic_values is None:
            raise ConfigError("c_td > 0 needs critic values")
        td = ops.square(ops.sub(critic_values, targets))
        loss = ops.add(loss, ops.scale(ops.sum(td), coefs.c_td / n))
    lv = value_of(loss)
    if not np.all(np.isfinite(lv.val)):
        raise NumericalError("non-finite actor-critic loss")
    return loss, LossAux(adv, weights, float(np.mean(value_of(ent).val)))


def inner_loss(params: AgentParams, gamma, coefs: LossCoefs, batch, spec, value_source: str, reduction="sum_time"):
    """Inner objective at meta-learned ``gamma`` (a Dual when differentiating in z).

    ``params`` may hold tape Vars; advantages are constants for the parameter
    gradient but keep their derivative with respect to gamma.
    """
    critic_values = None
    if value_source == "oracle":
        values = compute_values("oracle", params.map(value_of), batch, spec, gamma)
    elif value_source == "inner_head":
        inner, _ = critic_forward(params, batch.obs, spec)
        boot_inner, _ = critic_forward(params.map(lambda v: value_of(v).primal()), batch.bootstrap_obs, spec)
        critic_values = inner
        values = _concat_cols(ops.detach(inner), value_of(boot_inner))
    else:
        raise ConfigError("the inner loss reads values from the oracle or the inner head")
    return actor_critic_loss(
        params.policy, batch, spec, gamma, coefs, values, critic_values, meta_advantages=True, reduction=reduction
    )


def outer_loss(params: AgentParams, gamma_prime: float, coefs: LossCoefs, batch, spec, value_source: str,
               value_gamma=None, normalize: bool = False, reduction="sum_time", values=None):
    """Outer objective with fixed hyperparameters.

    ``value_source``: ``"outer_head"`` or ``"oracle"`` with ``value_gamma`` equal
    to ``gamma_prime`` gives the unbiased estimate; ``"inner_head"`` or the oracle
    at the inner discount reproduces the biased one. Advantages are fully
    stop-gradient. Precomputed ``values`` (B, T+1) replace the source lookup.
    """
    if values is None:
        vg = gamma_prime if value_gamma is None else value_gamma
        plain = params.map(lambda v: value_of(v).primal())
        values = compute_values(value_source, plain, batch, spec, Dual.lift(vg).primal())
    values = Dual.lift(values).primal()
    return actor_critic_loss(
        params.policy, batch, spec, gamma_prime, coefs, values,
        meta_advantages=False, normalize=normalize, reduction=reduction,
    )


def outer_critic_td_loss(params: AgentParams, batch: TrajectoryBatch, gamma_prime: float, spec, reduction="sum_time"):
    """One-step TD loss of the outer head with a stop-gradient bootstrap."""
    n = _denom(batch, reduction)
    _, outer = critic_forward(params, batch.value_obs(), spec)
    t = batch.seq_len
    v = _col_slice(outer, 0, t)
    v_next = ops.stop_gradient(_col_slice(outer, 1, t + 1))
    target = D.add(batch.rewards, D.mul(gamma_prime * (1.0 - batch.terminals.astype(float)), v_next))
    return ops.scale(ops.sum(ops.square(ops.sub(v, target))), 1.0 / n)


def _concat_cols(a: Dual, last: Dual) -> Dual:
    a, last = Dual.lift(a), Dual.lift(last)
    val = np.concatenate([a.val, last.val[:, None]], axis=1)
    if a.tan is None and last.tan is None:
        return Dual(val)
    return Dual(val, np.concatenate([a.tangent, last.tangent[:, None]], axis=1))

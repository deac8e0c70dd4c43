"""MG and BMG meta-gradient engines.

The discount logit z is seeded as a dual number. The inner gradient is taken
on a tape whose adjoints carry d/dz, so the updated parameters theta'(z)
arrive with their meta-tangent and every meta-gradient is read off as the
tangent of a scalar evaluated at theta'.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from selftune.agent.losses import LossCoefs, compute_values, inner_loss, outer_loss
from selftune.agent.networks import AgentParams, NetworkSpec, policy_forward
from selftune.autodiff import dual as D
from selftune.autodiff.dual import Dual
from selftune.autodiff.tape import Tape, value_of
from selftune.envs.rollout import TrajectoryBatch
from selftune.errors import ConfigError, NumericalError
from selftune.meta.gamma import gamma_of_logit
from selftune.meta.optim import OptimizerState, optimizer_step

ALGORITHMS = ("mg", "bmg")
OUTER_SOURCES = ("biased", "fixed")
DIVERGENCES = ("kl_target_first", "kl_param_first")


@dataclass(frozen=True)
class BmgSpec:
    target_steps: int = 1
    divergence: str = "kl_target_first"

    def __post_init__(self):
        if self.target_steps < 1:
            raise ConfigError("bmg.target_steps must be >= 1")
        if self.divergence not in DIVERGENCES:
            raise ConfigError(f"bmg.divergence must be one of {DIVERGENCES}")


@dataclass(frozen=True)
class MetaConfig:
    """Everything the engines need besides parameters, batches and optimizer state."""

    spec: NetworkSpec
    inner: LossCoefs
    outer: LossCoefs
    gamma_prime: float = 1.0
    bounds: tuple = (0.0, 1.0)
    inner_values: str = "oracle"  # oracle | inner_head
    outer_source: str = "fixed"  # biased | fixed
    normalize: bool = False
    reduction: str = "sum_time"
    bmg: BmgSpec = field(default_factory=BmgSpec)

    def __post_init__(self):
        if self.outer_source not in OUTER_SOURCES:
            raise ConfigError(f"outer source must be one of {OUTER_SOURCES}, got '{self.outer_source}'")
        if self.inner_values not in ("oracle", "inner_head"):
            raise ConfigError(f"inner value source must be 'oracle' or 'inner_head', got '{self.inner_values}'")

    def trainable(self, params: AgentParams) -> list:
        """Keys moved by the inner loss (the outer head has its own update)."""
        return [k for k in params.flat() if not k.startswith("outer_head/")]

    def outer_values_spec(self, gamma_value: float):
        """(value source, discount for oracle values) used by the outer loss."""
        if self.inner_values == "oracle":
            return "oracle", (gamma_value if self.outer_source == "biased" else self.gamma_prime)
        return ("inner_head" if self.outer_source == "biased" else "outer_head"), None


@dataclass
class MetaResult:
    meta_grad: float
    theta_prime: AgentParams  # plain arrays
    opt_state: OptimizerState
    outer_batch: TrajectoryBatch
    logs: dict


def dual_gamma(z: float, cfg: MetaConfig, seed: float = 1.0) -> Dual:
    return gamma_of_logit(Dual(np.float64(z), np.float64(seed)), *cfg.bounds)


def inner_update(params: AgentParams, z, batch: TrajectoryBatch, cfg: MetaConfig, opt_state: OptimizerState,
                 frozen_stats: dict | None = None):
    """theta'(z) with meta-tangents, plus the new optimizer state and a log dict.

    ``z`` may be a float (seeded with unit tangent) or a Dual. ``frozen_stats``
    is forwarded to :func:`optimizer_step`.
    """
    zd = z if isinstance(z, Dual) else Dual(np.float64(z), np.float64(1.0))
    gamma = gamma_of_logit(zd, *cfg.bounds)
    flat = params.flat()
    keys = cfg.trainable(params)
    tape = Tape()
    watched = {k: (tape.watch(value_of(v).primal()) if k in keys else v) for k, v in flat.items()}
    loss, aux = inner_loss(AgentParams.from_flat(watched), gamma, cfg.inner, batch, cfg.spec,
                           cfg.inner_values, cfg.reduction)
    grads = tape.gradient(loss, {k: watched[k] for k in keys})
    new, state = optimizer_step(opt_state, {k: value_of(flat[k]).primal() for k in keys}, grads, frozen_stats)
    theta_prime = AgentParams.from_flat({**flat, **new})
    logs = {"gamma": float(gamma.val), "inner_loss": float(value_of(loss).val), "entropy": aux.entropy}
    return theta_prime, state, logs


def outer_objective(theta_prime: AgentParams, batch: TrajectoryBatch, cfg: MetaConfig, gamma_value: float,
                    values=None):
    """Outer loss at dual theta'; returns (loss Dual, aux, values used)."""
    if values is None:
        source, vg = cfg.outer_values_spec(gamma_value)
        plain = theta_prime.map(lambda v: value_of(v).primal())
        values = compute_values(source, plain, batch, cfg.spec, vg)
    loss, aux = outer_loss(theta_prime, cfg.gamma_prime, cfg.outer, batch, cfg.spec, "oracle",
                           normalize=cfg.normalize, reduction=cfg.reduction, values=values)
    return value_of(loss), aux, Dual.lift(values).primal()


def _resolve_batch(outer_batch, theta_prime: AgentParams, cfg: MetaConfig) -> TrajectoryBatch:
    if callable(outer_batch):
        return outer_batch(theta_prime.values())
    return outer_batch


def _checked(x: Dual, what: str) -> float:
    g = float(x.tangent)
    if not np.isfinite(g):
        raise NumericalError(f"non-finite {what}")
    return g


def mg_meta_gradient(params: AgentParams, z: float, inner_batch: TrajectoryBatch,
                     outer_batch: TrajectoryBatch | Callable, cfg: MetaConfig,
                     opt_state: OptimizerState) -> MetaResult:
    """d L_outer(theta'(z)) / dz.

    ``outer_batch`` is a batch or a callable that collects one given the plain
    updated parameters.
    """
    theta_prime, state, logs = inner_update(params, z, inner_batch, cfg, opt_state)
    batch = _resolve_batch(outer_batch, theta_prime, cfg)
    loss, aux, _ = outer_objective(theta_prime, batch, cfg, logs["gamma"])
    logs.update(outer_loss=float(loss.val), outer_advantages=np.asarray(aux.weights.val))
    return MetaResult(_checked(loss, "MG meta-gradient"), theta_prime.values(), state, batch, logs)


def bmg_target(theta_prime: AgentParams, batches: list, cfg: MetaConfig, opt_state: OptimizerState,
               gamma_value: float) -> AgentParams:
    """K-1 inner-loss steps then one outer-loss step from theta'; plain arrays out."""
    k = cfg.bmg.target_steps
    cur = theta_prime.values()
    state = opt_state.copy()
    keys = cfg.trainable(cur)
    for i in range(k):
        batch = batches[min(i, len(batches) - 1)]
        tape = Tape()
        flat = cur.flat()
        watched = {n: (tape.watch(v) if n in keys else v) for n, v in flat.items()}
        p = AgentParams.from_flat(watched)
        if i < k - 1:
            loss, _ = inner_loss(p, gamma_value, cfg.inner, batch, cfg.spec, cfg.inner_values, cfg.reduction)
        else:
            source, vg = cfg.outer_values_spec(gamma_value)
            loss, _ = outer_loss(p, cfg.gamma_prime, cfg.outer, batch, cfg.spec, source, value_gamma=vg,
                                 normalize=cfg.normalize, reduction=cfg.reduction)
        grads = tape.gradient(loss, {n: watched[n] for n in keys})
        new, state = optimizer_step(state, {n: flat[n] for n in keys}, grads)
        cur = AgentParams.from_flat({**flat, **{n: v.val for n, v in new.items()}})
    return cur


def matching_loss(theta_prime: AgentParams, target: AgentParams, batch: TrajectoryBatch, cfg: MetaConfig) -> Dual:
    """Mean KL between target and current policies over the batch states."""
    lp = value_of(policy_forward(theta_prime.policy, batch.obs, cfg.spec))
    lt = value_of(policy_forward(target.values().policy, batch.obs, cfg.spec)).primal()
    if cfg.bmg.divergence == "kl_target_first":
        kl = D.sum(D.mul(D.exp(lt), D.sub(lt, lp)), axis=-1)
    else:
        kl = D.sum(D.mul(D.exp(lp), D.sub(lp, lt)), axis=-1)
    return D.mean(kl)


def bmg_meta_gradient(params: AgentParams, z: float, inner_batch: TrajectoryBatch,
                      outer_batch: TrajectoryBatch | Callable, cfg: MetaConfig,
                      opt_state: OptimizerState, target: AgentParams | None = None) -> MetaResult:
    """d match(theta'(z), theta~) / dz with theta~ held fixed."""
    theta_prime, state, logs = inner_update(params, z, inner_batch, cfg, opt_state)
    batch = _resolve_batch(outer_batch, theta_prime, cfg)
    if target is None:
        target = bmg_target(theta_prime, [batch], cfg, state, logs["gamma"])
    match = matching_loss(theta_prime, target, batch, cfg)
    _, aux, _ = outer_objective(theta_prime.values(), batch, cfg, logs["gamma"])
    logs.update(matching_loss=float(match.val), outer_advantages=np.asarray(aux.weights.val), target=target)
    return MetaResult(_checked(match, "BMG meta-gradient"), theta_prime.values(), state, batch, logs)


def meta_gradient(algorithm: str, *args, **kwargs) -> MetaResult:
    if algorithm == "mg":
        return mg_meta_gradient(*args, **kwargs)
    if algorithm == "bmg":
        return bmg_meta_gradient(*args, **kwargs)
    raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got '{algorithm}'")

"""Meta-gradient bias diagnostics and brute-force meta-gradient checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from selftune.agent.losses import normalize_advantages
from selftune.agent.networks import AgentParams
from selftune.autodiff.dual import Dual
from selftune.envs.chain import NUM_ACTIONS, ChainState, dc_analytic_value, enumerate_start_value
from selftune.envs.rollout import TrajectoryBatch
from selftune.errors import NumericalError
from selftune.meta.engine import MetaConfig, inner_update, matching_loss, outer_objective
from selftune.meta.optim import OptimizerState, step_stats

SOURCE_TAGS = ("biased", "fixed", "normalized")


@dataclass(frozen=True)
class AdvantageStats:
    mean: float
    std: float
    count: int
    source: str

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("advantage stats need at least one sample")
        if self.source not in SOURCE_TAGS:
            raise ValueError(f"source tag must be one of {SOURCE_TAGS}")


def advantage_stats(advantages, source: str) -> AdvantageStats:
    a = np.asarray(Dual.lift(advantages).val, dtype=float).ravel()
    return AdvantageStats(float(a.mean()), float(a.std()), int(a.size), source)


def outer_advantage_stats(batch: TrajectoryBatch, theta_prime: AgentParams, cfg: MetaConfig,
                          gamma_value: float) -> AdvantageStats:
    """Statistics of the advantages the outer loss would weight its policy gradient with."""
    _, aux, _ = outer_objective(theta_prime.values(), batch, cfg, gamma_value)
    return advantage_stats(aux.weights, "normalized" if cfg.normalize else cfg.outer_source)


def finite_diff_meta_gradient(pipeline, z: float, epsilon: float = 1e-6) -> float:
    """Central difference of a deterministic scalar ``pipeline`` over z."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    hi, lo = float(pipeline(z + epsilon)), float(pipeline(z - epsilon))
    if not (np.isfinite(hi) and np.isfinite(lo)):
        raise NumericalError("non-finite pipeline evaluation")
    return (hi - lo) / (2.0 * epsilon)


def oracle_resolves(pipeline, z: float, epsilon: float = 1e-6, tol: float = 1e-5, probe: float = 1e-11) -> bool:
    """Whether a central difference at ``epsilon`` can check the slope at z to ``tol``.

    The roundoff of the pipeline is measured from evaluations ``probe`` apart,
    where the true change is linear and far below f64 resolution; that spread
    over ``epsilon`` is the noise of the difference quotient. A draw counts as
    resolvable when this noise sits 10x below ``tol`` times the slope.
    """
    slope = finite_diff_meta_gradient(pipeline, z, 1e-4)
    f0 = float(pipeline(z))
    noise = max(abs(float(pipeline(z + k * probe)) - f0 - k * probe * slope) for k in (-2, -1, 1, 2))
    return noise / epsilon < 0.1 * tol * abs(slope)


def mg_pipeline(params: AgentParams, inner_batch, outer_batch, cfg: MetaConfig, opt_state: OptimizerState,
                z0: float):
    """z -> outer loss after the inner update, with batches and outer advantages frozen at z0.

    The outer advantages are constants of the outer objective (they carry no
    derivative), so they are evaluated once at z0 and reused; so are adaptive
    optimizer statistics.
    """
    theta0, state0, logs0 = inner_update(params, z0, inner_batch, cfg, opt_state)
    stats = step_stats(state0)
    _, _, values = outer_objective(theta0.values(), outer_batch, cfg, logs0["gamma"])

    def f(z):
        theta, _, logs = inner_update(params, Dual(np.float64(z)), inner_batch, cfg, opt_state, stats)
        loss, _, _ = outer_objective(theta, outer_batch, cfg, logs["gamma"], values=values)
        return float(loss.val)

    return f


def bmg_pipeline(params: AgentParams, inner_batch, matching_batch, target: AgentParams, cfg: MetaConfig,
                 opt_state: OptimizerState, z0: float):
    """z -> matching loss between theta'(z) and a frozen target."""
    _, state0, _ = inner_update(params, z0, inner_batch, cfg, opt_state)
    stats = step_stats(state0)

    def f(z):
        theta, _, _ = inner_update(params, Dual(np.float64(z)), inner_batch, cfg, opt_state, stats)
        return float(matching_loss(theta, target, matching_batch, cfg).val)

    return f


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


@dataclass(frozen=True)
class OracleReport:
    max_abs_discrepancy: float
    n: int


def oracle_consistency_check(policies, gammas) -> OracleReport:
    """Analytic start-state value vs stepping every chain outcome, over paired policies and discounts."""
    worst = 0.0
    n = 0
    start = ChainState(selected=None, timestep=0)
    for p, g in zip(policies, gammas):
        p = np.asarray(p, dtype=float)
        worst = max(worst, abs(dc_analytic_value(start, p, g) - enumerate_start_value(p, g)))
        n += 1
    return OracleReport(worst, n)


def random_policies(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.dirichlet(np.ones(NUM_ACTIONS), size=n)


__all__ = [
    "AdvantageStats", "OracleReport", "advantage_stats", "bmg_pipeline", "finite_diff_meta_gradient",
    "mg_pipeline", "normalize_advantages", "oracle_consistency_check", "oracle_resolves", "outer_advantage_stats",
    "random_policies", "rel_err",
]

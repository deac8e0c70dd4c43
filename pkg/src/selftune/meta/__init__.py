from selftune.meta.engine import (
    ALGORITHMS,
    DIVERGENCES,
    OUTER_SOURCES,
    BmgSpec,
    MetaConfig,
    MetaResult,
    bmg_meta_gradient,
    bmg_target,
    dual_gamma,
    inner_update,
    matching_loss,
    meta_gradient,
    mg_meta_gradient,
    outer_objective,
)
from selftune.meta.gamma import MetaParams, gamma_of_logit, logit_of_gamma
from selftune.meta.optim import KINDS, OptimizerState, global_norm, meta_update, optimizer_step, step_stats

__all__ = [
    "ALGORITHMS", "DIVERGENCES", "KINDS", "OUTER_SOURCES", "BmgSpec", "MetaConfig", "MetaParams", "MetaResult",
    "OptimizerState", "bmg_meta_gradient", "bmg_target", "dual_gamma", "gamma_of_logit",
    "global_norm", "inner_update", "logit_of_gamma", "matching_loss", "meta_gradient", "meta_update",
    "mg_meta_gradient", "optimizer_step", "outer_objective", "step_stats",
]

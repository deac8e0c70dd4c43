"""Policy/critic networks, advantage estimation and actor-critic losses."""
from selftune.agent.gae import gae_advantages
from selftune.agent.losses import (
    LossCoefs,
    actor_critic_loss,
    compute_values,
    inner_loss,
    normalize_advantages,
    outer_critic_td_loss,
    outer_loss,
)
from selftune.agent.networks import (
    AgentParams,
    NetworkSpec,
    critic_forward,
    entropy,
    init_params,
    policy_forward,
    policy_probs,
)

__all__ = [
    "AgentParams",
    "LossCoefs",
    "NetworkSpec",
    "actor_critic_loss",
    "compute_values",
    "critic_forward",
    "entropy",
    "gae_advantages",
    "init_params",
    "inner_loss",
    "normalize_advantages",
    "outer_critic_td_loss",
    "outer_loss",
    "policy_forward",
    "policy_probs",
]

"""Environments and batched rollouts."""
from selftune.envs.chain import (
    ChainBatch,
    ChainState,
    chain_values,
    dc_analytic_value,
    dc_reset,
    dc_step,
    enumerate_start_value,
)
from selftune.envs.rollout import ENV_IDS, RolloutState, TrajectoryBatch, init_rollout, make_env, rollout_batch
from selftune.envs.snake import SnakeBatch, SnakeState, snake_reset, snake_step

__all__ = [
    "ENV_IDS",
    "ChainBatch",
    "ChainState",
    "RolloutState",
    "SnakeBatch",
    "SnakeState",
    "TrajectoryBatch",
    "chain_values",
    "dc_analytic_value",
    "dc_reset",
    "dc_step",
    "enumerate_start_value",
    "init_rollout",
    "make_env",
    "rollout_batch",
    "snake_reset",
    "snake_step",
]

"""Batched trajectory collection with auto-reset."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from selftune.envs.chain import ChainBatch
from selftune.envs.snake import SnakeBatch
from selftune.errors import ConfigError, DistributionError

ENV_IDS = ("discounting-chain", "snake-6x6")


@dataclass
class TrajectoryBatch:
    obs: np.ndarray  # (B, T, *obs_shape)
    actions: np.ndarray  # (B, T)
    rewards: np.ndarray  # (B, T)
    terminals: np.ndarray  # (B, T) bool
    next_obs: np.ndarray  # (B, T, *obs_shape), pre-reset observation
    behavior_log_probs: np.ndarray  # (B, T)
    bootstrap_obs: np.ndarray  # (B, *obs_shape)
    episode_returns: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def batch_size(self) -> int:
        return self.actions.shape[0]

    @property
    def seq_len(self) -> int:
        return self.actions.shape[1]

    def value_obs(self) -> np.ndarray:
        """Observations s_0..s_T per sequence, shape (B, T+1, *obs_shape)."""
        return np.concatenate([self.obs, self.bootstrap_obs[:, None]], axis=1)


@dataclass
class RolloutState:
    """Everything a rollout needs to be reproducible: env arrays, RNG streams, partial returns."""

    env: object
    streams: list  # one np.random.Generator per env stream
    running_return: np.ndarray

    def copy(self) -> "RolloutState":
        return RolloutState(self.env.copy(), [_copy_generator(g) for g in self.streams], self.running_return.copy())


def _copy_generator(g: np.random.Generator) -> np.random.Generator:
    bit = type(g.bit_generator)()
    bit.state = g.bit_generator.state
    return np.random.Generator(bit)


def make_env(env_id: str, batch_size: int, **kwargs):
    if env_id == "discounting-chain":
        return ChainBatch(batch_size)
    if env_id == "snake-6x6":
        return SnakeBatch(batch_size, **kwargs)
    raise ConfigError(f"unknown environment '{env_id}', expected one of {ENV_IDS}")


def init_rollout(env_id: str, batch_size: int, seed: int, **kwargs) -> RolloutState:
    env = make_env(env_id, batch_size, **kwargs)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(batch_size)]
    keys = np.array([g.integers(2**62) for g in streams])
    env.reset(np.arange(batch_size), keys)
    return RolloutState(env, streams, np.zeros(batch_size))


def _sample(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def rollout_batch(policy, seq_len: int, state: RolloutState) -> tuple[TrajectoryBatch, RolloutState]:
    """Advance every stream ``seq_len`` steps under ``policy``.

    ``policy`` maps a (B, *obs_shape) array to (B, A) action probabilities.
    The input state is not modified; the advanced state is returned.
    """
    st = state.copy()
    env = st.env
    b = len(st.streams)
    obs_l, act_l, rew_l, term_l, next_l, logp_l = [], [], [], [], [], []
    finished = []
    obs = env.observe()
    # each stream draws its action uniforms for the whole sequence up front
    uniforms = np.stack([g.random(seq_len) for g in st.streams])
    for step in range(seq_len):
        probs = np.asarray(policy(obs), dtype=float)
        if probs.shape != (b, env.num_actions) or np.any(np.abs(probs.sum(1) - 1.0) > 1e-6):
            raise DistributionError("policy must return one distribution per stream")
        actions = _sample(probs, uniforms[:, step])
        rewards, done = env.step(actions)
        nxt = env.observe()
        st.running_return += rewards
        obs_l.append(obs)
        act_l.append(actions)
        rew_l.append(rewards)
        term_l.append(done)
        next_l.append(nxt)
        logp_l.append(np.log(probs[np.arange(b), actions]))
        idx = np.flatnonzero(done)
        if len(idx):
            finished.extend(st.running_return[idx].tolist())
            st.running_return[idx] = 0.0
            keys = np.array([st.streams[i].integers(2**62) for i in idx])
            env.reset(idx, keys)
            nxt = env.observe()
        obs = nxt
    batch = TrajectoryBatch(
        obs=np.stack(obs_l, 1),
        actions=np.stack(act_l, 1),
        rewards=np.stack(rew_l, 1),
        terminals=np.stack(term_l, 1),
        next_obs=np.stack(next_l, 1),
        behavior_log_probs=np.stack(logp_l, 1),
        bootstrap_obs=obs,
        episode_returns=np.array(finished),
    )
    return batch, st

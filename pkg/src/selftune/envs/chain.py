"""Discounting Chain: one decision at t=0, one delayed reward, fixed episode length.

The first action picks one of five chains. Each chain pays a single reward
after its own horizon; every later action is ignored. The longest chain pays
slightly more, so only a far-sighted discount prefers it.

Observation (7 floats): one-hot of the selected chain in slots 0..4, slot 5
set while nothing is selected yet, slot 6 = timestep / episode_len.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from selftune.autodiff import dual as D
from selftune.autodiff.dual import Dual
from selftune.errors import ActionError, DistributionError, StateError

HORIZONS = np.array([1, 3, 10, 30, 100])
REWARDS = np.array([1.0, 1.0, 1.0, 1.0, 1.1])
EPISODE_LEN = 100
NUM_ACTIONS = len(HORIZONS)
OBS_DIM = NUM_ACTIONS + 2
NONE_SLOT = NUM_ACTIONS
TIME_SLOT = NUM_ACTIONS + 1


@dataclass(frozen=True)
class ChainState:
    selected: int | None
    timestep: int
    horizons: tuple = tuple(HORIZONS.tolist())
    rewards: tuple = tuple(REWARDS.tolist())
    episode_len: int = EPISODE_LEN

    @property
    def terminal(self) -> bool:
        return self.timestep >= self.episode_len


def observe(state: ChainState) -> np.ndarray:
    obs = np.zeros(OBS_DIM)
    obs[NONE_SLOT if state.selected is None else state.selected] = 1.0
    obs[TIME_SLOT] = state.timestep / state.episode_len
    return obs


def dc_reset(seed: int = 0) -> tuple[ChainState, np.ndarray]:
    # The chain table is fixed; the seed is accepted for a uniform env interface.
    del seed
    state = ChainState(selected=None, timestep=0)
    return state, observe(state)


def dc_step(state: ChainState, action: int) -> tuple[ChainState, float, bool]:
    if state.terminal:
        raise StateError("step called on a finished episode")
    if not 0 <= int(action) < len(state.horizons):
        raise ActionError(f"action {action} outside 0..{len(state.horizons) - 1}")
    selected = int(action) if state.selected is None else state.selected
    t = state.timestep + 1
    reward = state.rewards[selected] if t == state.horizons[selected] else 0.0
    nxt = ChainState(selected, t, state.horizons, state.rewards, state.episode_len)
    return nxt, float(reward), nxt.terminal


def _check_probs(p: np.ndarray, n: int):
    if p.shape[-1] != n or np.any(p < -1e-12) or np.any(np.abs(p.sum(-1) - 1.0) > 1e-9):
        raise DistributionError("policy_probs must be a distribution over the chains")


def dc_analytic_value(state: ChainState, policy_probs, gamma: float) -> float:
    """Exact discounted value of ``state`` under a policy over chains."""
    p = np.asarray(policy_probs, dtype=float)
    h = np.asarray(state.horizons)
    r = np.asarray(state.rewards)
    _check_probs(p, len(h))
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    if state.selected is None:
        return float(np.sum(p * gamma ** (h - 1.0) * r))
    i = state.selected
    if state.timestep < h[i]:
        return float(gamma ** (h[i] - 1.0 - state.timestep) * r[i])
    return 0.0


def _gamma_pow(gamma: Dual, k: np.ndarray) -> Dual:
    """gamma ** k for a scalar dual gamma and an array of exponents."""
    g = Dual.lift(gamma)
    val = g.val**k
    if g.tan is None:
        return Dual(val)
    safe = np.where(k == 0, 0.0, k * g.val ** np.maximum(k - 1.0, 0.0))
    return Dual(val, safe * g.tan)


def chain_values(obs: np.ndarray, first_probs, gamma) -> Dual:
    """Vectorized exact values for observations of any leading shape.

    ``first_probs`` is the policy's distribution over chains at the initial
    state (shape (N,)). ``gamma`` may be a float or a Dual scalar.
    """
    obs = np.asarray(obs)
    sel = obs[..., :NUM_ACTIONS]
    t = np.rint(obs[..., TIME_SLOT] * EPISODE_LEN)
    unselected = obs[..., NONE_SLOT] > 0.5
    chain = np.argmax(sel, axis=-1)
    h = HORIZONS[chain]
    pending = (~unselected) & (t < h)
    k = np.where(pending, h - 1.0 - t, 0.0)
    selected_val = D.mul(_gamma_pow(gamma, k), np.where(pending, REWARDS[chain], 0.0))
    per_chain = D.mul(_gamma_pow(gamma, HORIZONS - 1.0), REWARDS)  # (N,)
    fp = Dual.lift(first_probs)
    if fp.shape != (NUM_ACTIONS,):
        raise DistributionError(f"first_probs must have shape ({NUM_ACTIONS},)")
    start_val = D.broadcast_to(D.sum(D.mul(fp, per_chain)), obs.shape[:-1])
    return D.where(unselected, start_val, selected_val)


def enumerate_start_value(policy_probs, gamma: float) -> float:
    """Brute-force initial-state value: play every chain to the end and discount."""
    total = 0.0
    for a, p in enumerate(np.asarray(policy_probs, dtype=float)):
        state, _ = dc_reset()
        ret, disc, done = 0.0, 1.0, False
        while not done:
            state, r, done = dc_step(state, a)
            ret += disc * r
            disc *= gamma
        total += p * ret
    return total


class ChainBatch:
    """B independent Discounting Chain streams stepped together."""

    num_actions = NUM_ACTIONS
    obs_shape = (OBS_DIM,)

    def __init__(self, batch_size: int):
        self.selected = np.full(batch_size, -1)
        self.t = np.zeros(batch_size, dtype=int)

    def copy(self) -> "ChainBatch":
        out = ChainBatch.__new__(ChainBatch)
        out.selected = self.selected.copy()
        out.t = self.t.copy()
        return out

    def reset(self, idx: np.ndarray, keys: np.ndarray):
        del keys
        self.selected[idx] = -1
        self.t[idx] = 0

    def observe(self) -> np.ndarray:
        b = len(self.t)
        obs = np.zeros((b, OBS_DIM))
        slot = np.where(self.selected < 0, NONE_SLOT, self.selected)
        obs[np.arange(b), slot] = 1.0
        obs[:, TIME_SLOT] = self.t / EPISODE_LEN
        return obs

    def step(self, actions: np.ndarray):
        actions = np.asarray(actions)
        if np.any((actions < 0) | (actions >= NUM_ACTIONS)):
            raise ActionError("action out of range")
        if np.any(self.t >= EPISODE_LEN):
            raise StateError("step called on a finished episode")
        self.selected = np.where(self.selected < 0, actions, self.selected)
        self.t = self.t + 1
        rewards = np.where(self.t == HORIZONS[self.selected], REWARDS[self.selected], 0.0)
        return rewards, self.t >= EPISODE_LEN

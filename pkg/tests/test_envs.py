import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selftune.envs import (
    ChainState,
    chain_values,
    dc_analytic_value,
    dc_reset,
    dc_step,
    enumerate_start_value,
    init_rollout,
    rollout_batch,
    snake_reset,
    snake_step,
)
from selftune.envs.chain import EPISODE_LEN, TIME_SLOT, observe
from selftune.envs import snake as snake_mod
from selftune.envs.snake import DOWN, GRID, LEFT, MOVES, RIGHT, UP, SnakeBatch, SnakeState, _rc
from selftune.errors import ActionError, DistributionError, StateError


# ---------------------------------------------------------------- chain


def test_dc_reset_is_unselected_time_zero():
    for seed in (0, 7):
        state, obs = dc_reset(seed)
        assert state.timestep == 0 and state.selected is None
        assert obs[TIME_SLOT] == 0.0
    (s1, o1), (s2, o2) = dc_reset(3), dc_reset(3)
    assert s1 == s2 and np.array_equal(o1, o2)


def _play(action_first, later=0):
    state, _ = dc_reset()
    rewards = []
    done = False
    a = action_first
    while not done:
        state, r, done = dc_step(state, a)
        rewards.append(r)
        a = later
    return rewards


def test_horizon_one_chain_pays_immediately():
    rewards = _play(0)
    assert rewards[0] == 1.0 and sum(rewards[1:]) == 0.0
    assert len(rewards) == EPISODE_LEN


def test_optimal_chain_return():
    rewards = _play(4)
    assert sum(rewards) == pytest.approx(1.1)
    assert rewards[99] == 1.1


def test_later_actions_do_not_matter():
    assert _play(2, later=0) == _play(2, later=4)


def test_dc_step_errors():
    state, _ = dc_reset()
    with pytest.raises(ActionError):
        dc_step(state, 5)
    done_state = ChainState(selected=1, timestep=EPISODE_LEN)
    with pytest.raises(StateError):
        dc_step(done_state, 0)


def test_analytic_value_examples():
    state, _ = dc_reset()
    assert dc_analytic_value(state, np.full(5, 0.2), 1.0) == pytest.approx(1.02, abs=1e-12)
    paid = ChainState(selected=1, timestep=5)
    assert dc_analytic_value(paid, np.full(5, 0.2), 0.9) == 0.0
    for g in (0.3, 0.95, 1.0):
        assert dc_analytic_value(state, np.eye(5)[0], g) == 1.0
    with pytest.raises(DistributionError):
        dc_analytic_value(state, np.full(5, 0.3), 0.9)


@settings(max_examples=50, deadline=None)
@given(
    logits=st.lists(st.floats(-5, 5), min_size=5, max_size=5),
    gamma=st.floats(0.01, 1.0),
)
def test_analytic_value_equals_enumeration(logits, gamma):
    p = np.exp(logits) / np.sum(np.exp(logits))
    state, _ = dc_reset()
    assert abs(dc_analytic_value(state, p, gamma) - enumerate_start_value(p, gamma)) < 1e-12


def test_chain_values_match_scalar_oracle_along_episodes():
    p = np.array([0.1, 0.2, 0.3, 0.15, 0.25])
    for chain in range(5):
        state, obs = dc_reset()
        while not state.terminal:
            v = chain_values(obs[None], p, 0.93).val[0]
            assert v == pytest.approx(dc_analytic_value(state, p, 0.93), abs=1e-14)
            state, _, _ = dc_step(state, chain)
            obs = observe(state)


# ---------------------------------------------------------------- snake


def _state(body, apple, t=0, key=0):
    return SnakeState(tuple(body), apple, t, True, key)


def test_snake_eats_adjacent_apple():
    s = _state([(2, 2)], (2, 3))
    s2, r, done = snake_step(s, RIGHT)
    assert r == 1.0 and not done and s2.length == 2
    assert s2.body == ((2, 3), (2, 2))
    assert s2.apple not in s2.body


def test_snake_dies_off_top_row():
    s = _state([(0, 3)], (4, 4))
    s2, r, done = snake_step(s, UP)
    assert done and r == 0.0 and not s2.alive
    with pytest.raises(StateError):
        snake_step(s2, DOWN)


def test_snake_reverse_into_neck_dies_but_tail_chase_is_legal():
    s = _state([(2, 2), (2, 3), (2, 4)], (5, 5))
    _, _, done = snake_step(s, RIGHT)
    assert done
    ring = _state([(2, 2), (2, 3), (3, 3), (3, 2)], (5, 5))  # head moves onto tail cell
    s2, r, done = snake_step(ring, DOWN)
    assert not done and s2.body[0] == (3, 2)


def test_snake_time_limit():
    s = SnakeState(((2, 2),), (5, 5), 499, True, 0)
    _, _, done = snake_step(s, LEFT)
    assert done


def _hamiltonian_successor():
    order = [(0, c) for c in range(GRID)]
    for r in range(1, GRID):
        cols = range(GRID - 1, 0, -1) if r % 2 == 1 else range(1, GRID)
        order += [(r, c) for c in cols]
    order += [(r, 0) for r in range(GRID - 1, 0, -1)]
    assert len(set(order)) == GRID * GRID
    return {order[i]: order[(i + 1) % len(order)] for i in range(len(order))}


def test_space_filling_tour_scores_35():
    succ = _hamiltonian_successor()
    state, _ = snake_reset(11, time_limit=100_000)
    score, done = 0.0, False
    while not done:
        head = state.body[0]
        delta = np.subtract(succ[head], head)
        action = int(np.flatnonzero((MOVES == delta).all(1))[0])
        state, r, done = snake_step(state, action)
        score += r
    assert score == 35.0 and state.length == 36


def _check_invariants(body, apple, alive):
    assert len(set(body)) == len(body)
    for a, b in zip(body, body[1:]):
        assert abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1
    if alive and apple is not None:
        assert apple not in body


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_snake_random_play_invariants(seed):
    rng = np.random.default_rng(seed)
    state, _ = snake_reset(seed)
    total, done = 0.0, False
    while not done:
        state, r, done = snake_step(state, int(rng.integers(4)))
        total += r
        _check_invariants(state.body, state.apple, state.alive)
    assert state.length == 1 + total


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_snake_batch_matches_scalar(seed):
    rng = np.random.default_rng(seed)
    keys = rng.integers(0, 2**40, size=6)
    batch = SnakeBatch(6)
    batch.reset(np.arange(6), keys)
    scalars = [snake_reset(int(k))[0] for k in keys]
    alive = np.ones(6, dtype=bool)
    for _ in range(60):
        actions = rng.integers(4, size=6)
        rewards, done = batch.step(actions)
        for i in np.flatnonzero(alive):
            scalars[i], r, d = snake_step(scalars[i], int(actions[i]))
            assert r == rewards[i] and d == done[i]
            if not d:
                assert batch.bodies()[i] == scalars[i].body
                assert _rc(batch.apple[i]) == scalars[i].apple
            _check_invariants(batch.bodies()[i], None, True)
        alive &= ~done
        if not alive.any():
            break
        # keep dead streams in place with a harmless replay of the reset
        dead = np.flatnonzero(done)
        batch.reset(dead, keys[dead])


def test_snake_obs_planes():
    state = _state([(1, 1), (1, 2), (2, 2)], (4, 0))
    obs = snake_mod.observe(state)
    assert obs.shape == (6, 6, 4)
    assert obs[1, 1, 0] == 1 and obs[..., 0].sum() == 1
    assert obs[..., 1].sum() == 2 and obs[1, 1, 1] == 0
    assert obs[2, 2, 2] == 1 and obs[4, 0, 3] == 1


# ---------------------------------------------------------------- rollouts


def _uniform(n):
    return lambda obs: np.full((obs.shape[0], n), 1.0 / n)


def test_rollout_single_transition_deterministic_policy():
    st0 = init_rollout("discounting-chain", 1, seed=0)
    batch, _ = rollout_batch(lambda o: np.eye(5)[[0]], 1, st0)
    assert batch.actions.tolist() == [[0]]
    assert batch.rewards.tolist() == [[1.0]]
    assert not batch.terminals[0, 0]
    assert batch.behavior_log_probs[0, 0] == 0.0


@pytest.mark.parametrize("env_id,n", [("discounting-chain", 5), ("snake-6x6", 4)])
def test_rollout_reproducible_and_pure(env_id, n):
    st0 = init_rollout(env_id, 8, seed=3)
    b1, s1 = rollout_batch(_uniform(n), 20, st0)
    b2, s2 = rollout_batch(_uniform(n), 20, st0)
    for f in ("obs", "actions", "rewards", "terminals", "behavior_log_probs", "bootstrap_obs"):
        assert np.array_equal(getattr(b1, f), getattr(b2, f))
    b3, _ = rollout_batch(_uniform(n), 20, s1)
    assert not np.array_equal(b1.actions, b3.actions)


def test_dc_table_batch_each_sequence_one_episode():
    st0 = init_rollout("discounting-chain", 128, seed=0)
    batch, st1 = rollout_batch(_uniform(5), 100, st0)
    assert batch.obs.shape == (128, 100, 7)
    assert batch.terminals[:, -1].all() and not batch.terminals[:, :-1].any()
    assert np.all(batch.obs[:, 0, 5] == 1.0)
    assert len(batch.episode_returns) == 128
    assert np.allclose(batch.rewards.sum(1), batch.episode_returns)
    batch2, _ = rollout_batch(_uniform(5), 100, st1)
    assert np.all(batch2.obs[:, 0, 5] == 1.0)


def test_snake_rollout_autoreset_returns():
    st0 = init_rollout("snake-6x6", 16, seed=1)
    state = st0
    total_eaten = 0.0
    for _ in range(20):
        batch, state = rollout_batch(_uniform(4), 5, state)
        total_eaten += batch.rewards.sum()
        assert batch.obs.shape == (16, 5, 6, 6, 4)
        # after a terminal the next observation is a fresh length-1 snake
        b, t = np.nonzero(batch.terminals[:, :-1])
        for i, j in zip(b, t):
            assert batch.obs[i, j + 1, :, :, 1].sum() == 0
    finished = batch.episode_returns
    assert np.all(finished >= 0)

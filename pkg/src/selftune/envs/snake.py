"""Snake on a 6x6 grid.

Reward +1 per apple, 0 otherwise (dying costs nothing). The episode ends when
the head leaves the grid or hits the body, when the grid is full, or at the
time limit. Observations are four 6x6 binary planes: head, body (without the
head), tail, apple; stored channels-last as (6, 6, 4).

Randomness (start cell, apple respawns) is drawn from a per-episode integer
key carried in the state, so ``snake_step`` is a pure function.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from selftune.errors import ActionError, StateError

GRID = 6
NUM_CELLS = GRID * GRID
NUM_ACTIONS = 4
UP, DOWN, LEFT, RIGHT = range(4)
MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1]])
TIME_LIMIT = 500
OBS_SHAPE = (GRID, GRID, 4)


def _draw(key: int, n: int) -> tuple[int, int]:
    """Uniform index in [0, n) and the follow-up key."""
    rng = np.random.default_rng(key)
    pick = int(rng.integers(n))
    return pick, int(rng.integers(2**62))


def _start(key: int) -> tuple[int, int, int]:
    head, key = _draw(key, NUM_CELLS)
    free = [c for c in range(NUM_CELLS) if c != head]
    pick, key = _draw(key, len(free))
    return head, free[pick], key


def _cell(rc) -> int:
    return int(rc[0]) * GRID + int(rc[1])


def _rc(cell: int) -> tuple[int, int]:
    return divmod(int(cell), GRID)


@dataclass(frozen=True)
class SnakeState:
    body: tuple  # (row, col) cells, head first
    apple: tuple | None
    timestep: int
    alive: bool
    key: int
    time_limit: int = TIME_LIMIT
    grid_size: int = GRID

    @property
    def length(self) -> int:
        return len(self.body)


def observe(state: SnakeState) -> np.ndarray:
    obs = np.zeros(OBS_SHAPE)
    hr, hc = state.body[0]
    obs[hr, hc, 0] = 1.0
    for r, c in state.body[1:]:
        obs[r, c, 1] = 1.0
    tr, tc = state.body[-1]
    obs[tr, tc, 2] = 1.0
    if state.apple is not None:
        obs[state.apple[0], state.apple[1], 3] = 1.0
    return obs


def snake_reset(seed: int, time_limit: int = TIME_LIMIT) -> tuple[SnakeState, np.ndarray]:
    head, apple, key = _start(int(seed))
    state = SnakeState((_rc(head),), _rc(apple), 0, True, key, time_limit)
    return state, observe(state)


def snake_step(state: SnakeState, action: int) -> tuple[SnakeState, float, bool]:
    if not state.alive:
        raise StateError("step called on a dead snake")
    if not 0 <= int(action) < NUM_ACTIONS:
        raise ActionError(f"action {action} outside 0..3")
    dr, dc = MOVES[int(action)]
    hr, hc = state.body[0]
    nr, nc = hr + int(dr), hc + int(dc)
    t = state.timestep + 1
    if not (0 <= nr < GRID and 0 <= nc < GRID):
        return SnakeState(state.body, state.apple, t, False, state.key, state.time_limit), 0.0, True
    new_head = (nr, nc)
    eat = new_head == state.apple
    rest = state.body if eat else state.body[:-1]
    if new_head in rest:
        return SnakeState(state.body, state.apple, t, False, state.key, state.time_limit), 0.0, True
    body = (new_head,) + rest
    apple, key, reward = state.apple, state.key, 0.0
    full = False
    if eat:
        reward = 1.0
        occupied = {_cell(b) for b in body}
        free = [c for c in range(NUM_CELLS) if c not in occupied]
        if free:
            pick, key = _draw(key, len(free))
            apple = _rc(free[pick])
        else:
            apple, full = None, True
    done = full or t >= state.time_limit
    return SnakeState(body, apple, t, not done, key, state.time_limit), reward, done


class SnakeBatch:
    """B Snake streams with array state; mirrors ``snake_step`` exactly.

    ``ttl[b, cell]`` is the number of further moves a body segment stays on
    ``cell`` (head = length, tail = 1, empty = 0).
    """

    num_actions = NUM_ACTIONS
    obs_shape = OBS_SHAPE

    def __init__(self, batch_size: int, time_limit: int = TIME_LIMIT):
        self.time_limit = time_limit
        self.ttl = np.zeros((batch_size, NUM_CELLS), dtype=np.int64)
        self.head = np.zeros(batch_size, dtype=np.int64)
        self.length = np.ones(batch_size, dtype=np.int64)
        self.apple = np.zeros(batch_size, dtype=np.int64)
        self.t = np.zeros(batch_size, dtype=np.int64)
        self.key = np.zeros(batch_size, dtype=np.int64)

    def copy(self) -> "SnakeBatch":
        out = SnakeBatch.__new__(SnakeBatch)
        out.time_limit = self.time_limit
        for name in ("ttl", "head", "length", "apple", "t", "key"):
            setattr(out, name, getattr(self, name).copy())
        return out

    def reset(self, idx: np.ndarray, keys: np.ndarray):
        for b, k in zip(np.atleast_1d(idx), np.atleast_1d(keys)):
            head, apple, key = _start(int(k))
            self.ttl[b] = 0
            self.ttl[b, head] = 1
            self.head[b], self.apple[b], self.key[b] = head, apple, key
            self.length[b] = 1
            self.t[b] = 0

    def observe(self) -> np.ndarray:
        b = len(self.head)
        obs = np.zeros((b, NUM_CELLS, 4))
        rows = np.arange(b)
        obs[rows, self.head, 0] = 1.0
        obs[:, :, 1] = self.ttl > 0
        obs[rows, self.head, 1] = 0.0
        obs[:, :, 2] = self.ttl == 1
        has_apple = self.apple >= 0
        obs[rows[has_apple], self.apple[has_apple], 3] = 1.0
        return obs.reshape(b, GRID, GRID, 4)

    def step(self, actions: np.ndarray):
        actions = np.asarray(actions)
        if np.any((actions < 0) | (actions >= NUM_ACTIONS)):
            raise ActionError("action out of range")
        b = len(self.head)
        rows = np.arange(b)
        hr, hc = np.divmod(self.head, GRID)
        nr = hr + MOVES[actions, 0]
        nc = hc + MOVES[actions, 1]
        off = (nr < 0) | (nr >= GRID) | (nc < 0) | (nc >= GRID)
        new = np.where(off, 0, nr * GRID + nc)
        eat = ~off & (new == self.apple)
        moved = np.where(eat[:, None], self.ttl, np.maximum(self.ttl - 1, 0))
        hit = ~off & (moved[rows, new] > 0)
        dead = off | hit
        live = ~dead
        self.t = self.t + 1
        length = self.length + eat
        moved[rows[live], new[live]] = length[live]
        self.ttl = np.where(live[:, None], moved, self.ttl)
        self.length = np.where(live, length, self.length)
        self.head = np.where(live, new, self.head)
        rewards = eat.astype(float)
        full = np.zeros(b, dtype=bool)
        for i in np.flatnonzero(eat):
            free = np.flatnonzero(self.ttl[i] == 0)
            if len(free):
                pick, self.key[i] = _draw(int(self.key[i]), len(free))
                self.apple[i] = free[pick]
            else:
                self.apple[i] = -1
                full[i] = True
        return rewards, dead | full | (self.t >= self.time_limit)

    def bodies(self) -> list[tuple]:
        """Per-stream body cells head first (for invariant checks)."""
        out = []
        for b in range(len(self.head)):
            cells = np.flatnonzero(self.ttl[b])
            order = cells[np.argsort(-self.ttl[b, cells])]
            out.append(tuple(_rc(c) for c in order))
        return out

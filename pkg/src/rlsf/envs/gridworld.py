"""Configurable tabular gridworld CMDP.

The verification bed for the proposition suites and the end-to-end runs:
small enough for exact occupancy solves and constrained-optimum oracles,
rich enough (slip, unsafe regions, detours) that the constrained and
unconstrained optima differ.

Cells are (col, row) pairs; the flat state index is ``row * width + col``.
Actions: 0 = up (+row), 1 = down, 2 = left, 3 = right. Moves that would
leave the grid stay in place. With slip probability p the agent moves in
the intended direction with mass 1 - p and slips to each perpendicular
direction with mass p / 2. Reaching the goal pays ``goal_reward`` instead
of the per-step reward and ends the episode (absorbing sink state in the
tabular model).
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..types import TabularCMDP, ValidationError
from .base import StepResult

Cell = tuple[int, int]

N_ACTIONS = 4
# action -> (dcol, drow)
MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))
# perpendicular slip directions per action
SLIPS = ((2, 3), (2, 3), (0, 1), (0, 1))


@dataclass(frozen=True)
class GridworldSpec:
    width: int
    height: int
    unsafe_cells: frozenset[Cell]
    goal_cell: Cell
    start_cell: Cell = (0, 0)
    slip_prob: float = 0.0
    gamma: float = 0.99
    c_max: float = 0.0
    horizon: int = 50
    step_reward: float = -1.0
    goal_reward: float = 10.0
    # zero-padded feature dims appended to the observation; lets a cost model
    # trained with a position-only mask transfer to agents with extra telemetry
    telemetry_dims: int = 0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValidationError("grid dimensions must be >= 2")
        if not (0.0 <= self.slip_prob < 1.0):
            raise ValidationError("slip_prob must lie in [0, 1)")
        object.__setattr__(self, "unsafe_cells", frozenset(tuple(c) for c in self.unsafe_cells))
        for cell in (self.goal_cell, self.start_cell, *self.unsafe_cells):
            col, row = cell
            if not (0 <= col < self.width and 0 <= row < self.height):
                raise ValidationError(f"cell {cell} outside the {self.width}x{self.height} grid")
        if tuple(self.goal_cell) in self.unsafe_cells:
            raise ValidationError("goal cell cannot be unsafe")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def cell_index(self, cell: Cell) -> int:
        col, row = cell
        return row * self.width + col

    def index_cell(self, idx: int) -> Cell:
        return (idx % self.width, idx // self.width)


def _move_distribution(spec: GridworldSpec, cell: Cell, action: int) -> dict[Cell, float]:
    out: dict[Cell, float] = {}
    directions = [(action, 1.0 - spec.slip_prob)]
    directions += [(slip, spec.slip_prob / 2.0) for slip in SLIPS[action]]
    for direction, prob in directions:
        if prob == 0.0:
            continue
        dc, dr = MOVES[direction]
        col = min(max(cell[0] + dc, 0), spec.width - 1)
        row = min(max(cell[1] + dr, 0), spec.height - 1)
        out[(col, row)] = out.get((col, row), 0.0) + prob
    return out


def gridworld_build(spec: GridworldSpec) -> TabularCMDP:
    """Explicit CMDP for the spec, with one extra absorbing sink state.

    The goal cell transitions to the sink with zero reward and cost, so the
    discounted tabular values agree with episodic rollouts.
    """
    n = spec.n_cells
    sink = n
    S = n + 1
    P = np.zeros((S, N_ACTIONS, S))
    r = np.full((S, N_ACTIONS), 0.0)
    c = np.zeros((S, N_ACTIONS))

    goal = spec.cell_index(spec.goal_cell)
    for idx in range(n):
        cell = spec.index_cell(idx)
        if idx == goal:
            P[idx, :, sink] = 1.0
            continue
        for a in range(N_ACTIONS):
            dist = _move_distribution(spec, cell, a)
            p_goal = 0.0
            for nxt, prob in dist.items():
                j = spec.cell_index(nxt)
                P[idx, a, j] += prob
                if j == goal:
                    p_goal += prob
            r[idx, a] = spec.step_reward * (1.0 - p_goal) + spec.goal_reward * p_goal
            if cell in spec.unsafe_cells:
                c[idx, a] = 1.0
    P[sink, :, sink] = 1.0

    if not _goal_reachable(spec):
        warnings.warn("goal cell is unreachable from the start cell", stacklevel=2)

    mu = np.zeros(S)
    mu[spec.cell_index(spec.start_cell)] = 1.0
    return TabularCMDP(
        P=P,
        r=r,
        c_gt=c,
        mu=mu,
        gamma=spec.gamma,
        c_max=spec.c_max,
        meta={"kind": "gridworld", "width": spec.width, "height": spec.height, "sink": sink},
    )


def _goal_reachable(spec: GridworldSpec) -> bool:
    seen = {spec.start_cell}
    queue = deque([spec.start_cell])
    while queue:
        cell = queue.popleft()
        if cell == spec.goal_cell:
            return True
        for a in range(N_ACTIONS):
            for nxt in _move_distribution(spec, cell, a):
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
    return False


class GridworldEnv:
    """Sampled episodic interface over the tabular model.

    Observations are the one-hot cell indicator, optionally padded with
    ``telemetry_dims`` velocity-style features (the previous move, then
    zeros) so transfer experiments can append agent telemetry without
    changing the task features.
    """

    is_discrete = True

    def __init__(self, spec: GridworldSpec):
        self.spec = spec
        self.cmdp = gridworld_build(spec)
        self._goal = spec.cell_index(spec.goal_cell)
        self._rng = np.random.default_rng(0)
        self._state: int | None = None
        self._prev_move = np.zeros(2)
        self._t = 0

    @property
    def obs_dim(self) -> int:
        return self.spec.n_cells + self.spec.telemetry_dims

    @property
    def n_actions(self) -> int:
        return N_ACTIONS

    @property
    def task_feature_indices(self) -> list[int]:
        """Observation indices that carry task (position) information."""
        return list(range(self.spec.n_cells))

    def _obs(self) -> np.ndarray:
        vec = np.zeros(self.obs_dim)
        vec[self._state] = 1.0
        if self.spec.telemetry_dims >= 2:
            vec[self.spec.n_cells : self.spec.n_cells + 2] = self._prev_move
        return vec

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._state = self.spec.cell_index(self.spec.start_cell)
        self._prev_move = np.zeros(2)
        self._t = 0
        return self._obs()

    def step(self, action: int) -> StepResult:
        if self._state is None:
            raise RuntimeError("reset() must be called before step()")
        action = int(action)
        if not (0 <= action < N_ACTIONS):
            raise ValidationError(f"action must be in [0, {N_ACTIONS}), got {action}")
        s = self._state
        gt_cost = int(self.cmdp.c_gt[s, action])
        nxt = int(self._rng.choice(self.cmdp.n_states, p=self.cmdp.P[s, action]))
        reward = self.spec.goal_reward if nxt == self._goal else self.spec.step_reward
        old_cell = np.array(self.spec.index_cell(s), dtype=np.float64)
        new_cell = np.array(self.spec.index_cell(nxt), dtype=np.float64) if nxt < self.spec.n_cells else old_cell
        self._prev_move = new_cell - old_cell
        self._state = nxt
        self._t += 1
        done = nxt == self._goal or self._t >= self.spec.horizon
        return StepResult(next_obs=self._obs(), reward=reward, done=done, gt_cost=gt_cost)

    @property
    def episode_terminated(self) -> bool:
        """True termination (goal reached) as opposed to horizon truncation."""
        return self._state == self._goal

    def render_meta(self) -> dict:
        """Metadata the labeling UI needs to draw the cell path."""
        return {
            "env": "gridworld",
            "width": self.spec.width,
            "height": self.spec.height,
            "goal": list(self.spec.goal_cell),
            "obs_cells": self.spec.n_cells,
        }


def benchmark_5x5() -> GridworldSpec:
    """The 5x5 benchmark grid: a wall of unsafe cells across the middle with
    a safe detour along the right edge, so the unconstrained shortest path
    crosses the unsafe region while the constrained optimum detours."""
    return GridworldSpec(
        width=5,
        height=5,
        unsafe_cells=frozenset({(0, 2), (1, 2), (2, 2), (3, 2)}),
        goal_cell=(0, 4),
        start_cell=(0, 0),
        slip_prob=0.0,
        gamma=0.99,
        c_max=0.0,
        horizon=40,
    )

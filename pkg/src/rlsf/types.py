"""Core value types shared across the package.

Trajectories and segments are the unit of data collection and feedback;
``TabularCMDP`` is the explicit-model representation against which all
exact oracles operate. Everything here is an immutable value object once
constructed and safe to share across rollout workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = [
    "ValidationError",
    "UnsupportedError",
    "UndefinedEstimateError",
    "InsufficientFeedbackError",
    "Transition",
    "Trajectory",
    "Segment",
    "TabularCMDP",
    "split_into_segments",
    "trajectory_to_records",
    "trajectory_from_records",
    "write_trajectory_jsonl",
    "read_trajectory_jsonl",
    "canonical_json",
]

PROB_ATOL = 1e-12


class ValidationError(ValueError):
    """Raised when an input violates a declared contract."""


class UnsupportedError(RuntimeError):
    """Raised for configurations the implementation deliberately rejects."""


class UndefinedEstimateError(RuntimeError):
    """Raised when the closed-form estimate is queried where no feedback exists."""


class InsufficientFeedbackError(RuntimeError):
    """Raised when feedback densities do not cover the policy's support."""


def _as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if not np.all(np.isfinite(v)):
        raise ValidationError("state/action vector contains non-finite entries")
    return v


@dataclass(frozen=True)
class Transition:
    """One (s_t, a_t, r_t, done_t) record of a trajectory."""

    t: int
    state: np.ndarray
    action: np.ndarray
    reward: float
    done: bool = False

    def __post_init__(self):
        if self.t < 0:
            raise ValidationError(f"timestep must be >= 0, got {self.t}")
        if not np.isfinite(self.reward):
            raise ValidationError("reward must be finite")
        object.__setattr__(self, "state", _as_vector(self.state))
        object.__setattr__(self, "action", _as_vector(self.action))


@dataclass
class Trajectory:
    """Ordered transitions from one episode (or episode prefix).

    Timesteps are consecutive from 0 and at most the final transition may
    carry ``done``. ``traj_id`` is assigned by the run loop so segments and
    feedback queries can refer back to the trajectory.
    """

    transitions: list[Transition]
    env_seed: int = 0
    policy_version: int = 0
    traj_id: str | None = None

    def __post_init__(self):
        for i, tr in enumerate(self.transitions):
            if tr.t != i:
                raise ValidationError(
                    f"timesteps must be consecutive from 0; index {i} has t={tr.t}"
                )
            if tr.done and i != len(self.transitions) - 1:
                raise ValidationError("only the final transition may have done=True")

    def __len__(self) -> int:
        return len(self.transitions)

    def states(self) -> np.ndarray:
        return np.stack([tr.state for tr in self.transitions])

    def actions(self) -> np.ndarray:
        return np.stack([tr.action for tr in self.transitions])

    def rewards(self) -> np.ndarray:
        return np.array([tr.reward for tr in self.transitions], dtype=np.float64)


@dataclass(frozen=True)
class Segment:
    """Inclusive slice [start, end] of a trajectory; the unit of feedback."""

    trajectory_id: str
    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start <= self.end):
            raise ValidationError(f"invalid segment bounds [{self.start}, {self.end}]")

    def __len__(self) -> int:
        return self.end - self.start + 1


def split_into_segments(traj: Trajectory, k: int) -> list[Segment]:
    """Break a trajectory into contiguous non-overlapping segments of length k.

    Covers every timestep; the final segment of the episode may be shorter
    than k and is treated like any other.
    """
    if k < 1:
        raise ValidationError(f"segment length must be >= 1, got {k}")
    n = len(traj)
    if n == 0:
        raise ValidationError("cannot segment an empty trajectory")
    tid = traj.traj_id if traj.traj_id is not None else ""
    return [Segment(tid, i, min(i + k - 1, n - 1)) for i in range(0, n, k)]


@dataclass
class TabularCMDP:
    """Explicit constrained MDP: (P, r, c_gt, mu, gamma, c_max).

    ``P`` has shape (S, A, S) with row-stochastic (s, a) slices, ``r`` and
    ``c_gt`` have shape (S, A), and ``c_gt`` is exactly binary. Episodic
    termination is modelled by absorbing states (zero reward/cost self
    loops), which reconciles finite episodes with the discounted
    infinite-horizon value definitions.
    """

    P: np.ndarray
    r: np.ndarray
    c_gt: np.ndarray
    mu: np.ndarray
    gamma: float
    c_max: float
    # optional metadata attached by environment builders
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        self.c_gt = np.asarray(self.c_gt, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        S, A = self.r.shape
        if self.P.shape != (S, A, S):
            raise ValidationError(f"P must have shape {(S, A, S)}, got {self.P.shape}")
        if self.c_gt.shape != (S, A):
            raise ValidationError("c_gt must match r's shape")
        if self.mu.shape != (S,):
            raise ValidationError("mu must have one entry per state")
        if not np.allclose(self.P.sum(axis=2), 1.0, atol=PROB_ATOL, rtol=0.0):
            raise ValidationError("every P[s, a, :] row must sum to 1 within 1e-12")
        if abs(self.mu.sum() - 1.0) > PROB_ATOL:
            raise ValidationError("mu must sum to 1 within 1e-12")
        if np.any((self.c_gt != 0.0) & (self.c_gt != 1.0)):
            raise ValidationError("c_gt entries must be exactly 0 or 1")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValidationError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.c_max < 0.0:
            raise ValidationError("c_max must be >= 0")

    @property
    def n_states(self) -> int:
        return self.r.shape[0]

    @property
    def n_actions(self) -> int:
        return self.r.shape[1]


# ---------------------------------------------------------------------------
# Trajectory record format (structured text, one JSON record per transition)
# ---------------------------------------------------------------------------


def canonical_json(obj) -> str:
    """Canonical single-line JSON used for every on-disk / on-wire record."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def trajectory_to_records(traj: Trajectory) -> list[dict]:
    """One dict per transition: t, state values, action values, reward, done."""
    return [
        {
            "t": tr.t,
            "state": [float(x) for x in tr.state],
            "action": [float(x) for x in tr.action],
            "reward": float(tr.reward),
            "done": bool(tr.done),
        }
        for tr in traj.transitions
    ]


def trajectory_from_records(
    records: Iterable[dict],
    env_seed: int = 0,
    policy_version: int = 0,
    traj_id: str | None = None,
) -> Trajectory:
    transitions = [
        Transition(
            t=int(rec["t"]),
            state=np.array(rec["state"], dtype=np.float64),
            action=np.array(rec["action"], dtype=np.float64),
            reward=float(rec["reward"]),
            done=bool(rec["done"]),
        )
        for rec in records
    ]
    return Trajectory(transitions, env_seed=env_seed, policy_version=policy_version, traj_id=traj_id)


def write_trajectory_jsonl(traj: Trajectory, path) -> None:
    """Header line with trajectory metadata, then one record line per step."""
    header = {
        "traj_id": traj.traj_id,
        "env_seed": traj.env_seed,
        "policy_version": traj.policy_version,
        "length": len(traj),
    }
    with open(path, "w") as fh:
        fh.write(canonical_json(header) + "\n")
        for rec in trajectory_to_records(traj):
            fh.write(canonical_json(rec) + "\n")


def read_trajectory_jsonl(path) -> Trajectory:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"empty trajectory file: {path}")
    header = json.loads(lines[0])
    return trajectory_from_records(
        (json.loads(ln) for ln in lines[1:]),
        env_seed=int(header.get("env_seed", 0)),
        policy_version=int(header.get("policy_version", 0)),
        traj_id=header.get("traj_id"),
    )

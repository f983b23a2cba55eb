"""Query selection: SimHash state discretization, count-based densities,
novelty-triggered querying, and the budgeted ablation samplers/schedules.

A state is novel when its hash code has never occurred in feedback data; a
trajectory is queried under novelty sampling when it contains at least ``e``
novel states (counted per occurrence, against the density map as of the
start of the round). Because codes only accumulate, novelty implicitly
yields a decreasing query schedule.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .types import Segment, Trajectory, ValidationError


class SimHashProjector:
    """Sign-of-random-projection hash phi(s) = sgn(A s) in {-1, +1}^n.

    A has i.i.d. standard normal entries drawn once from the recorded seed;
    sign of an exact zero resolves to +1 so codes are total functions.
    """

    def __init__(self, n_bits: int, state_dim: int, seed: int):
        if n_bits < 1 or state_dim < 1:
            raise ValidationError("n_bits and state_dim must be positive")
        self.n_bits = n_bits
        self.state_dim = state_dim
        self.seed = seed
        self.A = np.random.default_rng(seed).standard_normal((n_bits, state_dim))

    def signs(self, states: np.ndarray) -> np.ndarray:
        """(N, n_bits) array of +-1 codes for a batch of states."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if states.shape[1] != self.state_dim:
            raise ValidationError(
                f"state dimension {states.shape[1]} != projector dimension {self.state_dim}"
            )
        proj = states @ self.A.T
        return np.where(proj >= 0.0, 1, -1).astype(np.int8)

    def codes(self, states: np.ndarray) -> list[bytes]:
        """Hashable packed-bit keys for a batch of states."""
        bits = self.signs(states) > 0
        packed = np.packbits(bits, axis=1)
        return [row.tobytes() for row in packed]

    def code(self, state: np.ndarray) -> bytes:
        return self.codes(np.atleast_2d(state))[0]


class DensityMap:
    """Counts of hash-code occurrences in segments shown to the evaluator."""

    def __init__(self, counts: dict[bytes, int] | None = None):
        self._counts: dict[bytes, int] = dict(counts) if counts else {}

    def count(self, code: bytes) -> int:
        return self._counts.get(code, 0)

    def increment(self, code: bytes, by: int = 1) -> None:
        if by < 0:
            raise ValidationError("density counts only ever increase")
        self._counts[code] = self._counts.get(code, 0) + by

    def total(self) -> int:
        return sum(self._counts.values())

    def __len__(self) -> int:
        return len(self._counts)

    def to_dict(self) -> dict[str, int]:
        """Hex-keyed snapshot for checkpoints."""
        return {code.hex(): n for code, n in sorted(self._counts.items())}

    @classmethod
    def from_dict(cls, data: dict[str, int]) -> "DensityMap":
        return cls({bytes.fromhex(k): int(v) for k, v in data.items()})


def novel_state_count(traj: Trajectory, density: DensityMap, projector: SimHashProjector) -> int:
    """Number of timesteps whose code is unseen (counted per occurrence)."""
    return sum(1 for code in projector.codes(traj.states()) if density.count(code) == 0)


def is_novel(traj: Trajectory, density: DensityMap, projector: SimHashProjector, e: int = 1) -> bool:
    """True iff the trajectory contains at least e novel states."""
    if e < 1:
        raise ValidationError("novelty threshold e must be >= 1")
    return novel_state_count(traj, density, projector) >= e


def record_feedback_densities(
    density: DensityMap, traj: Trajectory, segments: list[Segment], projector: SimHashProjector
) -> None:
    """Increment each shown state's code count by one per occurrence.

    Only trajectories actually shown to the evaluator update the map.
    """
    codes = projector.codes(traj.states())
    for seg in segments:
        for t in range(seg.start, seg.end + 1):
            density.increment(codes[t])


# ---------------------------------------------------------------------------
# Schedules and samplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuerySchedule:
    """novelty: query all novel trajectories (no budget).
    uniform: fixed per-round budget. decreasing: total budget split over
    rounds proportionally to 1/t."""

    kind: str
    per_round: int = 0
    total_budget: int = 0
    n_rounds: int = 0

    def __post_init__(self):
        if self.kind not in ("novelty", "uniform", "decreasing"):
            raise ValidationError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "uniform" and self.per_round < 0:
            raise ValidationError("uniform schedule needs per_round >= 0")
        if self.kind == "decreasing" and (self.total_budget < 0 or self.n_rounds < 1):
            raise ValidationError("decreasing schedule needs total_budget >= 0 and n_rounds >= 1")

    def budget(self, round_index: int) -> int | None:
        """Query budget for a 0-based round index; None means unbudgeted."""
        if self.kind == "novelty":
            return None
        if self.kind == "uniform":
            return self.per_round
        return decreasing_allocation(self.total_budget, self.n_rounds)[round_index]


def decreasing_allocation(total_budget: int, n_rounds: int) -> list[int]:
    """Per-round counts proportional to 1/t, rounded, summing to <= budget."""
    weights = np.array([1.0 / t for t in range(1, n_rounds + 1)])
    raw = total_budget * weights / weights.sum()
    alloc = np.rint(raw).astype(int)
    # trim rounding overshoot from the tail so the total never exceeds budget
    excess = int(alloc.sum()) - total_budget
    i = n_rounds - 1
    while excess > 0 and i >= 0:
        take = min(excess, alloc[i])
        alloc[i] -= take
        excess -= take
        i -= 1
    return [int(x) for x in alloc]


def mean_entropy_score(traj: Trajectory, classifier) -> float:
    """Average per-step binary entropy of the classifier's safe probability."""
    p = classifier.p_safe(traj.states(), traj.actions())
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    ent = -(p * np.log(p) + (1.0 - p) * np.log(1.0 - p))
    return float(ent.mean())


def select_queries(
    trajs: list[Trajectory],
    schedule: QuerySchedule,
    round_index: int,
    *,
    projector: SimHashProjector | None = None,
    density: DensityMap | None = None,
    e: int = 1,
    scorer=None,
    rng: np.random.Generator | None = None,
    mode: str = "random",
) -> list[Trajectory]:
    """Pick the trajectories to show the evaluator this round.

    novelty schedule: all trajectories with >= e novel states.
    Budgeted schedules select by ``mode``: "entropy" sorts descending by
    ``scorer`` (stable ties) and takes the budget prefix, "random" samples
    uniformly without replacement. A budget larger than the candidate pool
    returns everything.
    """
    if schedule.kind == "novelty":
        if projector is None or density is None:
            raise ValidationError("novelty selection needs a projector and density map")
        return [t for t in trajs if is_novel(t, density, projector, e)]

    budget = schedule.budget(round_index)
    if budget >= len(trajs):
        if budget > len(trajs):
            warnings.warn(
                f"query budget {budget} exceeds the {len(trajs)} available trajectories; returning all",
                stacklevel=2,
            )
        return list(trajs)
    if mode == "entropy":
        if scorer is None:
            raise ValidationError("entropy selection needs a scorer")
        scores = np.array([scorer(t) for t in trajs])
        order = np.argsort(-scores, kind="stable")
        return [trajs[i] for i in order[:budget]]
    if mode == "random":
        if rng is None:
            raise ValidationError("random selection needs an rng")
        idx = rng.choice(len(trajs), size=budget, replace=False)
        return [trajs[i] for i in sorted(idx)]
    raise ValidationError(f"unknown sampling mode {mode!r}")

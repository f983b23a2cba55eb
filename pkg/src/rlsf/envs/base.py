"""Shared environment plumbing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepResult:
    """Outcome of one environment step.

    ``gt_cost`` carries the ground-truth binary cost for scripted evaluators
    and metrics only; the training loop never exposes it to the learner.
    """

    next_obs: np.ndarray
    reward: float
    done: bool
    gt_cost: int

    def __post_init__(self):
        if self.gt_cost not in (0, 1):
            raise ValueError(f"gt_cost must be 0 or 1, got {self.gt_cost}")

"""Evaluator contract, scripted labeling, and the persistent feedback buffer.

Feedback happens between rounds: the trainer issues queries (one full
trajectory plus its segment bounds), an evaluator labels every segment
safe/unsafe, and each state inherits its segment's label into the buffer.
The query/answer log is append-only JSONL; replaying it rebuilds the buffer
exactly, and the scripted and human paths produce byte-identical logs for
identical labels.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .costmodel import LabeledExample
from .types import Segment, Trajectory, ValidationError, canonical_json, trajectory_from_records, trajectory_to_records


class FeedbackTimeoutError(RuntimeError):
    """Raised when a human feedback round is not completed in time."""


@dataclass
class FeedbackQuery:
    query_id: str
    trajectory: Trajectory
    segments: list[Segment]
    round_index: int
    render_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.trajectory)
        covered = []
        for seg in self.segments:
            if seg.end >= n:
                raise ValidationError("segment bounds exceed trajectory length")
            covered.extend(range(seg.start, seg.end + 1))
        if sorted(covered) != list(range(n)):
            raise ValidationError("segments must partition the trajectory's timesteps")

    def payload(self, labels: list[int] | None = None) -> dict:
        """Wire/persistence format shared by the service, replay CLI, and UI.

        ``labels`` is the per-segment overlay; empty while the query is
        pending.
        """
        return {
            "query_id": self.query_id,
            "round": self.round_index,
            "traj_id": self.trajectory.traj_id,
            "env_seed": self.trajectory.env_seed,
            "policy_version": self.trajectory.policy_version,
            "segments": [[seg.start, seg.end] for seg in self.segments],
            "transitions": trajectory_to_records(self.trajectory),
            "meta": self.render_meta,
            "labels": [] if labels is None else [int(x) for x in labels],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "FeedbackQuery":
        traj = trajectory_from_records(
            payload["transitions"],
            env_seed=int(payload.get("env_seed", 0)),
            policy_version=int(payload.get("policy_version", 0)),
            traj_id=payload.get("traj_id"),
        )
        segments = [Segment(traj.traj_id or "", s, e) for s, e in payload["segments"]]
        return cls(
            query_id=payload["query_id"],
            trajectory=traj,
            segments=segments,
            round_index=int(payload.get("round", 0)),
            render_meta=payload.get("meta", {}),
        )


@dataclass(frozen=True)
class FeedbackAnswer:
    query_id: str
    labels: tuple[int, ...]

    def __post_init__(self):
        if any(lbl not in (0, 1) for lbl in self.labels):
            raise ValidationError("labels must be 0 (unsafe) or 1 (safe)")
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))


def scripted_label(gt_costs) -> int:
    """y_safe = 0 iff the agent hit an unsafe state anywhere in the segment."""
    costs = np.asarray(gt_costs)
    if costs.size == 0:
        raise ValidationError("segment must contain at least one step")
    return 0 if np.any(costs == 1) else 1


class ScriptedEvaluator:
    """Automated evaluator driven by the environment's ground-truth costs."""

    name = "scripted"

    def __init__(self, gt_costs: dict[str, np.ndarray]):
        # traj_id -> per-step ground-truth cost array; metrics-side channel,
        # never visible to the learner or to human backends
        self._gt = gt_costs

    def collect(self, queries: list[FeedbackQuery], timeout: float | None = None) -> list[FeedbackAnswer]:
        answers = []
        for q in queries:
            costs = self._gt[q.trajectory.traj_id]
            labels = [scripted_label(costs[seg.start : seg.end + 1]) for seg in q.segments]
            answers.append(FeedbackAnswer(q.query_id, tuple(labels)))
        return answers


class ServiceEvaluator:
    """Human bridge: enqueues queries on the feedback hub and blocks until
    the labeling UI has answered all of them.

    On timeout the policy is either "abort" (raise, default: silent fallback
    would corrupt a human-feedback study) or "scripted" with a fallback
    evaluator supplied at construction.
    """

    name = "human"

    def __init__(self, hub, timeout: float = 1800.0, poll_interval: float = 0.5,
                 on_timeout: str = "abort", fallback: ScriptedEvaluator | None = None):
        if on_timeout not in ("abort", "scripted"):
            raise ValidationError("on_timeout must be 'abort' or 'scripted'")
        if on_timeout == "scripted" and fallback is None:
            raise ValidationError("scripted fallback requested but no fallback evaluator given")
        self.hub = hub
        self.timeout = timeout
        self.poll_interval = poll_interval
        self.on_timeout = on_timeout
        self.fallback = fallback

    def collect(self, queries: list[FeedbackQuery], timeout: float | None = None) -> list[FeedbackAnswer]:
        limit = self.timeout if timeout is None else timeout
        self.hub.enqueue(queries)
        deadline = time.monotonic() + limit
        while not self.hub.all_answered():
            if time.monotonic() >= deadline:
                if self.on_timeout == "scripted":
                    self.hub.clear_pending()
                    return self.fallback.collect(queries)
                raise FeedbackTimeoutError(
                    f"{len(self.hub.pending_ids())} queries unanswered after {limit:.0f}s"
                )
            time.sleep(self.poll_interval)
        return self.hub.take_answers()


class FeedbackBuffer:
    """Append-only store of state-level labeled examples with provenance."""

    def __init__(self):
        self.examples: list[LabeledExample] = []
        # (query_id, segment_index, round_index) per example
        self.provenance: list[tuple[str, int, int]] = []

    def __len__(self) -> int:
        return len(self.examples)

    def extend_from_answer(self, query: FeedbackQuery, answer: FeedbackAnswer) -> None:
        """Label inheritance: every state in a segment gets the segment's label."""
        if answer.query_id != query.query_id:
            raise ValidationError("answer does not match query")
        if len(answer.labels) != len(query.segments):
            raise ValidationError(
                f"expected {len(query.segments)} labels, got {len(answer.labels)}"
            )
        for si, (seg, label) in enumerate(zip(query.segments, answer.labels)):
            for t in range(seg.start, seg.end + 1):
                tr = query.trajectory.transitions[t]
                self.examples.append(LabeledExample(tr.state, tr.action, label))
                self.provenance.append((query.query_id, si, query.round_index))

    def label_counts(self) -> tuple[int, int]:
        labels = [ex.y_safe for ex in self.examples]
        return labels.count(1), labels.count(0)

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.examples:
            raise ValidationError("buffer is empty")
        states = np.stack([ex.state for ex in self.examples])
        actions = np.stack([ex.action for ex in self.examples])
        labels = np.array([ex.y_safe for ex in self.examples], dtype=np.float64)
        return states, actions, labels


# ---------------------------------------------------------------------------
# Append-only query/answer log
# ---------------------------------------------------------------------------


def append_query_entry(path, query: FeedbackQuery) -> None:
    entry = {"kind": "query", **query.payload()}
    with open(path, "a") as fh:
        fh.write(canonical_json(entry) + "\n")


def append_answer_entry(path, answer: FeedbackAnswer) -> None:
    entry = {"kind": "answer", "query_id": answer.query_id, "labels": list(answer.labels)}
    with open(path, "a") as fh:
        fh.write(canonical_json(entry) + "\n")


def read_feedback_log(path) -> tuple[list[FeedbackQuery], list[FeedbackAnswer]]:
    queries, answers = [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            entry = json.loads(line)
            if entry["kind"] == "query":
                queries.append(FeedbackQuery.from_payload(entry))
            elif entry["kind"] == "answer":
                answers.append(FeedbackAnswer(entry["query_id"], tuple(entry["labels"])))
            else:
                raise ValidationError(f"unknown log entry kind {entry['kind']!r}")
    return queries, answers


def replay_feedback_log(path) -> FeedbackBuffer:
    """Rebuild the buffer exactly from the persisted log."""
    queries, answers = read_feedback_log(path)
    by_id = {q.query_id: q for q in queries}
    buffer = FeedbackBuffer()
    for ans in answers:
        if ans.query_id not in by_id:
            raise ValidationError(f"answer for unknown query {ans.query_id!r}")
        buffer.extend_from_answer(by_id[ans.query_id], ans)
    return buffer

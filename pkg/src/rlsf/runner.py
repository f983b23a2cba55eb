"""The full training loop: alternate data/feedback collection with cost
inference and policy improvement until the step budget is exhausted.

Each round: roll out the current policy, pick trajectories to query
(novelty-triggered or budgeted), obtain per-segment labels from the
evaluator, grow the state-level feedback buffer and the hash-code density
map, retrain the safety classifier (warm start), infer costs for every
rollout of the round, and take a PPO-Lagrangian step. Everything needed to
resume bit-exactly — nets, optimizers, lambda, density map, buffer, and all
RNG streams — goes into the round checkpoint.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, build_env
from .costmodel import CostModel, SafetyClassifier, train_classifier
from .feedback import (
    FeedbackBuffer,
    FeedbackQuery,
    ScriptedEvaluator,
    ServiceEvaluator,
    append_answer_entry,
    append_query_entry,
)
from .nets import Adam
from .sampler import (
    DensityMap,
    QuerySchedule,
    SimHashProjector,
    mean_entropy_score,
    record_feedback_densities,
    select_queries,
)
from .trainer import (
    AgentNets,
    LagrangeState,
    PPOConfig,
    RolloutEpisode,
    build_agent,
    collect_rollouts,
    ppo_lagrangian_update,
)
from .types import canonical_json, split_into_segments, trajectory_to_records

log = logging.getLogger("rlsf")

METRIC_FIELDS = [
    "round", "return_mean", "gt_cost_mean", "cv_rate", "inferred_cost_mean",
    "lambda", "queries", "buffer_size", "steps_total",
]


@dataclass
class RoundReport:
    round: int
    return_mean: float
    gt_cost_mean: float
    cv_rate: float
    inferred_cost_mean: float
    lagrange: float
    queries: int
    buffer_size: int
    steps_total: int

    def as_row(self) -> dict:
        row = asdict(self)
        row["lambda"] = row.pop("lagrange")
        return row


class RLSFRun:
    """One experiment in one directory; resumable from its checkpoints."""

    def __init__(self, config: RunConfig, run_dir):
        self.cfg = config
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "checkpoints").mkdir(exist_ok=True)
        (self.run_dir / "config.yaml").write_text(config.snapshot_yaml())

        self.env = build_env(config)
        fb = config["feedback"]
        self.evaluator_kind = fb["evaluator"]
        self.k = int(fb["segment_length"])
        self.e = int(fb["novelty_e"])
        self.c_max = float(config["constraint"]["c_max"])
        self.gamma = float(config["env"]["gamma"])

        self.n_rounds = max(1, int(np.ceil(config["run"]["total_steps"] / config["run"]["steps_per_round"])))
        self.schedule = QuerySchedule(
            kind=fb["schedule"],
            per_round=int(fb["per_round_budget"]),
            total_budget=int(fb["total_budget"]),
            n_rounds=self.n_rounds,
        )
        self.sampler_mode = fb["sampler"]

        seed = int(config["run"]["seed"])
        root = np.random.SeedSequence(seed)
        rollout_ss, ppo_ss, clf_ss, select_ss, init_ss, hash_ss, clf_init_ss = root.spawn(7)
        self.rng_rollout = np.random.default_rng(rollout_ss)
        self.rng_ppo = np.random.default_rng(ppo_ss)
        self.rng_clf = np.random.default_rng(clf_ss)
        self.rng_select = np.random.default_rng(select_ss)
        # init-only stream: consumed at classifier construction, never by
        # training, so reconstruction on resume cannot shift the other streams
        self._rng_clf_init = np.random.default_rng(clf_init_ss)

        self.nets: AgentNets = build_agent(
            self.env,
            config["policy"]["hidden"],
            config["critic"]["hidden"],
            float(config["policy"]["lr"]),
            float(config["critic"]["lr"]),
            np.random.default_rng(init_ss),
            action_scale=float(config["policy"]["action_scale"]),
        )
        self.lagrange = LagrangeState(
            value=float(config["constraint"]["lagrange_init"]),
            lr=float(config["constraint"]["lagrange_lr"]),
        )
        self.ppo_cfg = PPOConfig(
            clip_ratio=float(config["ppo"]["clip_ratio"]),
            gae_lambda=float(config["ppo"]["gae_lambda"]),
            epochs=int(config["ppo"]["epochs"]),
            minibatch_size=int(config["ppo"]["minibatch_size"]),
            entropy_coef=float(config["ppo"]["entropy_coef"]),
            normalize_advantages=bool(config["ppo"]["normalize_advantages"]),
            gamma=self.gamma,
        )

        self.projector = SimHashProjector(
            n_bits=int(config["simhash"]["n_bits"]),
            state_dim=self.env.obs_dim,
            seed=int(np.random.default_rng(hash_ss).integers(0, 2**31 - 1)),
        )
        self.density = DensityMap()
        self.buffer = FeedbackBuffer()
        self.classifier: SafetyClassifier | None = None
        self.classifier_opt: Adam | None = None
        self.classifier_trained = False

        self.round_index = 0
        self.steps_total = 0
        self.queries_total = 0
        self.hub = None  # set externally for human runs

    # -- helpers -----------------------------------------------------------

    @property
    def feedback_log_path(self) -> Path:
        return self.run_dir / "feedback_log.jsonl"

    @property
    def metrics_path(self) -> Path:
        return self.run_dir / "metrics.csv"

    @property
    def trajectory_log_path(self) -> Path:
        return self.run_dir / "trajectories.jsonl"

    def _ensure_classifier(self) -> SafetyClassifier:
        if self.classifier is None:
            ccfg = self.cfg["classifier"]
            self.classifier = SafetyClassifier(
                obs_dim=self.env.obs_dim,
                hidden=[int(h) for h in ccfg["hidden"]],
                rng=self._rng_clf_init,
                input_mode=ccfg["input_mode"],
                n_actions=self.env.n_actions if self.env.is_discrete else None,
                action_dim=0 if self.env.is_discrete else self.env.action_dim,
                feature_mask=ccfg["feature_mask"],
            )
            self.classifier_opt = Adam(self.classifier.mlp.n_params, lr=float(ccfg["lr"]))
        return self.classifier

    def cost_model(self) -> CostModel | None:
        if self.classifier is None or not self.classifier_trained:
            return None
        return CostModel(classifier=self.classifier)

    def _make_evaluator(self, gt_costs: dict[str, np.ndarray]):
        if self.evaluator_kind == "scripted":
            return ScriptedEvaluator(gt_costs)
        if self.evaluator_kind == "human":
            if self.hub is None:
                raise RuntimeError("human evaluator requires an attached feedback hub")
            fb = self.cfg["feedback"]
            fallback = ScriptedEvaluator(gt_costs) if fb["on_timeout"] == "scripted" else None
            return ServiceEvaluator(
                self.hub,
                timeout=float(fb["timeout_s"]),
                poll_interval=float(fb["poll_interval_s"]),
                on_timeout=fb["on_timeout"],
                fallback=fallback,
            )
        return None  # ground_truth: no evaluator, costs come from telemetry

    def _log_trajectories(self, episodes: list[RolloutEpisode], round_index: int) -> None:
        if self.cfg["run"]["log_trajectories"] != "all":
            return
        meta = self.env.render_meta()
        with open(self.trajectory_log_path, "a") as fh:
            for ep in episodes:
                entry = {
                    "traj_id": ep.traj.traj_id,
                    "round": round_index,
                    "env_seed": ep.traj.env_seed,
                    "policy_version": ep.traj.policy_version,
                    "transitions": trajectory_to_records(ep.traj),
                    "meta": meta,
                }
                fh.write(canonical_json(entry) + "\n")

    def _select_for_feedback(self, episodes: list[RolloutEpisode]) -> list[RolloutEpisode]:
        trajs = [ep.traj for ep in episodes]
        by_id = {ep.traj.traj_id: ep for ep in episodes}
        scorer = None
        if self.sampler_mode == "entropy" and self.cost_model() is not None:
            model = self.cost_model()
            scorer = lambda t: mean_entropy_score(t, model.classifier)
        elif self.sampler_mode == "entropy":
            scorer = lambda t: 0.0  # untrained estimator: all ties
        chosen = select_queries(
            trajs,
            self.schedule,
            self.round_index,
            projector=self.projector,
            density=self.density,
            e=self.e,
            scorer=scorer,
            rng=self.rng_select,
            mode=self.sampler_mode,
        )
        return [by_id[t.traj_id] for t in chosen]

    # -- the loop ----------------------------------------------------------

    def run(self):
        """Yield one RoundReport per round until the step budget is spent."""
        while self.steps_total < int(self.cfg["run"]["total_steps"]):
            rnd = self.round_index
            episodes = collect_rollouts(
                self.nets.policy,
                self.env,
                int(self.cfg["run"]["steps_per_round"]),
                self.rng_rollout,
                policy_version=rnd,
                id_prefix=f"r{rnd:04d}",
            )
            self._log_trajectories(episodes, rnd)
            gt_costs = {ep.traj.traj_id: ep.gt_costs for ep in episodes}

            queries_this_round = 0
            if self.evaluator_kind != "ground_truth":
                shown = self._select_for_feedback(episodes)
                queries = [
                    FeedbackQuery(
                        query_id=f"{ep.traj.traj_id}",
                        trajectory=ep.traj,
                        segments=split_into_segments(ep.traj, self.k),
                        round_index=rnd,
                        render_meta=self.env.render_meta(),
                    )
                    for ep in shown
                ]
                for q in queries:
                    append_query_entry(self.feedback_log_path, q)
                evaluator = self._make_evaluator(gt_costs)
                answers = evaluator.collect(queries)
                answers.sort(key=lambda a: a.query_id)
                by_id = {q.query_id: q for q in queries}
                for ans in answers:
                    append_answer_entry(self.feedback_log_path, ans)
                    query = by_id[ans.query_id]
                    self.buffer.extend_from_answer(query, ans)
                    # densities update only for segments actually shown
                    record_feedback_densities(self.density, query.trajectory, query.segments, self.projector)
                queries_this_round = len(queries)
                self.queries_total += queries_this_round

                if len(self.buffer) > 0:
                    self._train_classifier_round()

            self._attach_costs(episodes, gt_costs)
            stats = ppo_lagrangian_update(
                episodes, self.nets, self.lagrange, self.c_max, self.ppo_cfg, self.rng_ppo
            )

            self.steps_total += sum(len(ep) for ep in episodes)
            report = RoundReport(
                round=rnd,
                return_mean=float(np.mean([ep.traj.rewards().sum() for ep in episodes])),
                gt_cost_mean=float(np.mean([ep.gt_costs.sum() for ep in episodes])),
                cv_rate=100.0 * float(sum(ep.gt_costs.sum() for ep in episodes))
                / float(sum(len(ep) for ep in episodes)),
                inferred_cost_mean=float(np.mean([ep.inferred_costs.sum() for ep in episodes])),
                lagrange=self.lagrange.value,
                queries=queries_this_round,
                buffer_size=len(self.buffer),
                steps_total=self.steps_total,
            )
            self._append_metrics(report)
            self.round_index += 1
            self.save_checkpoint()
            log.info(
                "round %d: return %.2f cv %.2f%% lambda %.3f queries %d buffer %d",
                rnd, report.return_mean, report.cv_rate, report.lagrange,
                report.queries, report.buffer_size,
            )
            yield report

    def _train_classifier_round(self) -> None:
        ccfg = self.cfg["classifier"]
        clf = self._ensure_classifier()
        states, actions, labels = self.buffer.to_arrays()
        X = clf.features(states, actions)
        epochs = int(ccfg["epochs_per_round"] if self.classifier_trained else ccfg["epochs_initial"])
        train_classifier(
            clf, X, labels,
            epochs=epochs,
            batch_size=int(ccfg["batch_size"]),
            lr=float(ccfg["lr"]),
            rng=self.rng_clf,
            optimizer=self.classifier_opt,
        )
        self.classifier_trained = True

    def _attach_costs(self, episodes: list[RolloutEpisode], gt_costs: dict[str, np.ndarray]) -> None:
        """Inferred costs for the policy update; the learner sees ground truth
        only in the known-cost baseline mode."""
        model = self.cost_model()
        for ep in episodes:
            if self.evaluator_kind == "ground_truth":
                ep.inferred_costs = gt_costs[ep.traj.traj_id].astype(np.float64)
            elif model is not None:
                ep.inferred_costs = model.costs(ep.traj.states(), ep.traj.actions())
            else:
                ep.inferred_costs = np.zeros(len(ep))

    def _append_metrics(self, report: RoundReport) -> None:
        new_file = not self.metrics_path.exists()
        with open(self.metrics_path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
            if new_file:
                writer.writeheader()
            writer.writerow(report.as_row())

    # -- checkpointing -----------------------------------------------------

    def checkpoint_path(self, round_index: int) -> Path:
        return self.run_dir / "checkpoints" / f"round_{round_index:04d}.npz"

    def save_checkpoint(self) -> Path:
        state = {
            "round_index": self.round_index,
            "steps_total": self.steps_total,
            "queries_total": self.queries_total,
            "lagrange_value": self.lagrange.value,
            "classifier_trained": self.classifier_trained,
            "density": self.density.to_dict(),
            "projector_seed": self.projector.seed,
            "provenance": [list(p) for p in self.buffer.provenance],
            "rng": {
                "rollout": self.rng_rollout.bit_generator.state,
                "ppo": self.rng_ppo.bit_generator.state,
                "clf": self.rng_clf.bit_generator.state,
                "select": self.rng_select.bit_generator.state,
            },
        }
        arrays = {
            "policy_params": _get_policy_flat(self.nets),
            "v_params": self.nets.v_critic.net.get_flat(),
            "c_params": self.nets.c_critic.net.get_flat(),
            "policy_opt_m": self.nets.policy_opt.m,
            "policy_opt_v": self.nets.policy_opt.v,
            "policy_opt_t": np.array([self.nets.policy_opt.t]),
            "v_opt_m": self.nets.v_opt.m,
            "v_opt_v": self.nets.v_opt.v,
            "v_opt_t": np.array([self.nets.v_opt.t]),
            "c_opt_m": self.nets.c_opt.m,
            "c_opt_v": self.nets.c_opt.v,
            "c_opt_t": np.array([self.nets.c_opt.t]),
        }
        if len(self.buffer) > 0:
            states, actions, labels = self.buffer.to_arrays()
            arrays["buffer_states"] = states
            arrays["buffer_actions"] = actions
            arrays["buffer_labels"] = labels
        if self.classifier is not None:
            arrays["classifier_params"] = self.classifier.mlp.get_flat()
            arrays["classifier_opt_m"] = self.classifier_opt.m
            arrays["classifier_opt_v"] = self.classifier_opt.v
            arrays["classifier_opt_t"] = np.array([self.classifier_opt.t])
        path = self.checkpoint_path(self.round_index)
        np.savez(path, state_json=np.frombuffer(json.dumps(state).encode(), dtype=np.uint8), **arrays)
        (self.run_dir / "checkpoints" / "latest").write_text(path.name)
        return path

    def load_checkpoint(self, path=None) -> None:
        if path is None:
            latest = (self.run_dir / "checkpoints" / "latest").read_text().strip()
            path = self.run_dir / "checkpoints" / latest
        data = np.load(path, allow_pickle=False)
        state = json.loads(bytes(data["state_json"]).decode())

        self.round_index = int(state["round_index"])
        self.steps_total = int(state["steps_total"])
        self.queries_total = int(state["queries_total"])
        self.lagrange.value = float(state["lagrange_value"])
        self.classifier_trained = bool(state["classifier_trained"])
        self.density = DensityMap.from_dict(state["density"])
        self.projector = SimHashProjector(
            n_bits=int(self.cfg["simhash"]["n_bits"]),
            state_dim=self.env.obs_dim,
            seed=int(state["projector_seed"]),
        )
        self.rng_rollout.bit_generator.state = state["rng"]["rollout"]
        self.rng_ppo.bit_generator.state = state["rng"]["ppo"]
        self.rng_clf.bit_generator.state = state["rng"]["clf"]
        self.rng_select.bit_generator.state = state["rng"]["select"]

        _set_policy_flat(self.nets, data["policy_params"])
        self.nets.v_critic.net.set_flat(data["v_params"])
        self.nets.c_critic.net.set_flat(data["c_params"])
        for opt, prefix in ((self.nets.policy_opt, "policy_opt"),
                            (self.nets.v_opt, "v_opt"), (self.nets.c_opt, "c_opt")):
            opt.m = data[f"{prefix}_m"].copy()
            opt.v = data[f"{prefix}_v"].copy()
            opt.t = int(data[f"{prefix}_t"][0])

        self.buffer = FeedbackBuffer()
        if "buffer_states" in data:
            from .costmodel import LabeledExample

            states = data["buffer_states"]
            actions = data["buffer_actions"]
            labels = data["buffer_labels"]
            for s, a, y in zip(states, actions, labels):
                self.buffer.examples.append(LabeledExample(s, a, int(y)))
            self.buffer.provenance = [tuple(p) for p in state["provenance"]]
        if "classifier_params" in data:
            clf = self._ensure_classifier()
            clf.mlp.set_flat(data["classifier_params"])
            self.classifier_opt.m = data["classifier_opt_m"].copy()
            self.classifier_opt.v = data["classifier_opt_v"].copy()
            self.classifier_opt.t = int(data["classifier_opt_t"][0])
        self._truncate_metrics()

    def _truncate_metrics(self) -> None:
        """Drop metric rows at or beyond the resume round."""
        if not self.metrics_path.exists():
            return
        with open(self.metrics_path, newline="") as fh:
            rows = [row for row in csv.DictReader(fh) if int(row["round"]) < self.round_index]
        with open(self.metrics_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
            writer.writeheader()
            for row in rows:
                writer.writerow(row)


def _get_policy_flat(nets: AgentNets) -> np.ndarray:
    policy = nets.policy
    return policy.get_flat() if hasattr(policy, "get_flat") else policy.net.get_flat()


def _set_policy_flat(nets: AgentNets, flat: np.ndarray) -> None:
    policy = nets.policy
    if hasattr(policy, "set_flat"):
        policy.set_flat(flat)
    else:
        policy.net.set_flat(flat)


def rlsf_run(config: RunConfig, run_dir, resume: bool = False):
    """Build (or resume) a run and yield its RoundReports."""
    run = RLSFRun(config, run_dir)
    if resume:
        run.load_checkpoint()
    yield from run.run()

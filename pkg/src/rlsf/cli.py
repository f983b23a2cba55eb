"""Command-line entry points.

Subcommands: train (run the feedback-driven training loop), props (run the
verification property suites), replay (export a trajectory for UI playback),
eval (ground-truth evaluation of a trained policy), serve-feedback (host the
labeling service over an existing run directory).

Exit codes: 0 success, 1 validation problem, 2 runtime fault. The RLSF_RUN_ROOT
environment variable overrides where run directories are created.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import props as props_mod
from .config import ConfigError, load_config
from .feedback import read_feedback_log
from .runner import RLSFRun
from .service import FeedbackHub, serve
from .trainer import evaluate_policy
from .types import ValidationError, canonical_json


def _run_root() -> Path:
    return Path(os.environ.get("RLSF_RUN_ROOT", "."))


def _resolve_run_dir(cfg, override: str | None) -> Path:
    if override:
        return Path(override)
    name = cfg["run"]["name"] or f"run_seed{cfg['run']['seed']}"
    return _run_root() / cfg["run"]["out_dir"] / name


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    run_dir = _resolve_run_dir(cfg, args.run_dir)
    run = RLSFRun(cfg, run_dir)
    if args.resume:
        run.load_checkpoint()
    server = None
    if run.evaluator_kind == "human":
        fb = cfg["feedback"]
        run.hub = FeedbackHub(run_id=str(run_dir))
        server, _ = serve(run.hub, host=fb["host"], port=int(fb["port"]),
                          static_dir=args.ui, in_thread=True)
        print(f"feedback service listening on http://{fb['host']}:{fb['port']}")
    try:
        for report in run.run():
            print(
                f"round {report.round:3d}  return {report.return_mean:8.2f}  "
                f"cv {report.cv_rate:6.2f}%  lambda {report.lagrange:7.3f}  "
                f"queries {report.queries:3d}  buffer {report.buffer_size:6d}"
            )
    finally:
        if server is not None:
            server.should_exit = True
    print(f"run complete: {run_dir}")
    return 0


def cmd_props(args) -> int:
    report = props_mod.run_all(seed=args.seed, trials=args.trials)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0 if report["all_passed"] else 1


def _find_query_payload(run_dir: Path, traj_id: str) -> dict | None:
    log_path = run_dir / "feedback_log.jsonl"
    if not log_path.exists():
        return None
    queries, answers = read_feedback_log(log_path)
    labels = {a.query_id: list(a.labels) for a in answers}
    for q in queries:
        if q.trajectory.traj_id == traj_id:
            return q.payload(labels=labels.get(q.query_id))
    return None


def _find_logged_trajectory(run_dir: Path, traj_id: str) -> dict | None:
    log_path = run_dir / "trajectories.jsonl"
    if not log_path.exists():
        return None
    with open(log_path) as fh:
        for line in fh:
            if not line.strip():
                continue
            entry = json.loads(line)
            if entry.get("traj_id") == traj_id:
                return {
                    "query_id": traj_id,
                    "round": entry.get("round", 0),
                    "traj_id": traj_id,
                    "env_seed": entry.get("env_seed", 0),
                    "policy_version": entry.get("policy_version", 0),
                    "segments": [],
                    "transitions": entry["transitions"],
                    "meta": entry.get("meta", {}),
                    "labels": [],
                }
    return None


def cmd_replay(args) -> int:
    run_dir = Path(args.run_dir)
    payload = _find_query_payload(run_dir, args.traj_id)
    if payload is None:
        payload = _find_logged_trajectory(run_dir, args.traj_id)
    if payload is None:
        print(f"trajectory {args.traj_id!r} not found in {run_dir}", file=sys.stderr)
        return 1
    text = canonical_json(payload)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = load_config(run_dir / "config.yaml")
    run = RLSFRun(cfg, run_dir)
    run.load_checkpoint(args.checkpoint)
    metrics = evaluate_policy(
        run.nets.policy, run.env, n_episodes=args.episodes, seed=args.seed,
        deterministic=not args.stochastic,
    )
    print(json.dumps(metrics, indent=2))
    return 0


def cmd_serve_feedback(args) -> int:
    run_dir = Path(args.run_dir)
    log_path = run_dir / "feedback_log.jsonl"
    hub = FeedbackHub(run_id=str(run_dir))
    if log_path.exists():
        queries, answers = read_feedback_log(log_path)
        answered = {a.query_id for a in answers}
        pending = [q for q in queries if q.query_id not in answered]
        hub.enqueue(pending)
        print(f"{len(pending)} pending queries from {log_path}")
    from .feedback import append_answer_entry

    hub.answer_sink = lambda answer: append_answer_entry(log_path, answer)
    print(f"serving feedback on http://{args.host}:{args.port}")
    serve(hub, host=args.host, port=args.port, static_dir=args.ui)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlsf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the training loop from a config file")
    p_train.add_argument("config")
    p_train.add_argument("--run-dir", default=None)
    p_train.add_argument("--resume", action="store_true")
    p_train.add_argument("--ui", default=None, help="static UI directory for human runs")
    p_train.set_defaults(func=cmd_train)

    p_props = sub.add_parser("props", help="run the proposition/property suites")
    p_props.add_argument("--seed", type=int, default=0)
    p_props.add_argument("--trials", type=int, default=None)
    p_props.add_argument("--out", default=None)
    p_props.set_defaults(func=cmd_props)

    p_replay = sub.add_parser("replay", help="export a trajectory for UI playback")
    p_replay.add_argument("run_dir")
    p_replay.add_argument("traj_id")
    p_replay.add_argument("--out", default=None)
    p_replay.set_defaults(func=cmd_replay)

    p_eval = sub.add_parser("eval", help="evaluate a checkpointed policy with ground-truth metrics")
    p_eval.add_argument("run_dir")
    p_eval.add_argument("--episodes", type=int, default=50)
    p_eval.add_argument("--seed", type=int, default=12345)
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--stochastic", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_serve = sub.add_parser("serve-feedback", help="host the labeling service for a run directory")
    p_serve.add_argument("run_dir")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8008)
    p_serve.add_argument("--ui", default=None)
    p_serve.set_defaults(func=cmd_serve_feedback)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime fault
        print(f"runtime fault: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

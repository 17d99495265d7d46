"""Headless driver: run scripted experiments, replay saved trees, serve the UI.

Experiments are declarative phase lists (evolve N generations, inject a
demonstration, update the target), so the shipped studies are data files.
Each seed runs an independent session; seeds fan out over worker processes
and artifacts are aggregated deterministically afterwards.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import yaml

from . import lfd
from .assets import packaged_path, resolve_scenario
from .bt import BehaviorTree, Status
from .errors import BtLearnError, ConfigError
from .gp import FitnessParams, GpConfig
from .pool import Registry, run_episode
from .session import DemoFlags, SessionManager
from .world import GoalSpec, reset

EXIT_OK = 0
EXIT_UNSOLVED = 1
EXIT_CONFIG = 2


# -- experiment configs -----------------------------------------------------------


def load_experiment_config(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    if not p.exists():
        try:
            p = packaged_path("configs", str(path))
        except ConfigError:
            raise ConfigError(f"no such config file: {path}")
    try:
        doc = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{p}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: expected a mapping at top level")
    for field in ("scenario", "phases"):
        if field not in doc:
            raise ConfigError(f"{p}: missing required field {field!r}")
    if not isinstance(doc["phases"], list) or not doc["phases"]:
        raise ConfigError(f"{p}: 'phases' must be a non-empty list")
    for i, phase in enumerate(doc["phases"]):
        if not isinstance(phase, dict) or len(phase) != 1:
            raise ConfigError(f"{p}: phases[{i}] must have exactly one key")
        kind = next(iter(phase))
        if kind not in ("evolve", "demo", "update_goal"):
            raise ConfigError(f"{p}: phases[{i}] has unknown kind {kind!r}")
    doc["_dir"] = str(p.parent)
    return doc


def _resolve_demo_file(ref: str, config_dir: str) -> Path:
    cand = Path(config_dir) / ref
    if cand.exists():
        return cand
    if Path(ref).exists():
        return Path(ref)
    return packaged_path("demos", ref)


def run_experiment(config: dict[str, Any], seed: int, out_dir: str | Path) -> dict[str, Any]:
    """All phases of one seeded run; returns a summary of artifacts."""
    out = Path(out_dir) / f"seed_{seed}"
    out.mkdir(parents=True, exist_ok=True)
    manager = SessionManager(out / "sessions")
    configs = {
        "gp": {**config.get("gp", {}), "seed": seed},
        "fitness": config.get("fitness", {}),
    }
    sid = manager.create_session(config["scenario"], configs, session_id=f"run{seed}")
    for phase in config["phases"]:
        kind, spec = next(iter(phase.items()))
        if kind == "evolve":
            manager.start_gp(sid, int(spec["generations"]), wait=True)
        elif kind == "demo":
            demo = lfd.load_demo(_resolve_demo_file(spec["file"], config["_dir"]))
            manager.add_demonstration(sid, demo, DemoFlags.from_dict(spec))
        elif kind == "update_goal":
            extra = GoalSpec.from_dict({"targets": spec.get("targets", [])})
            manager.update_goal(sid, spec.get("mode", "extend"), extra)
    best = manager.get_best_tree(sid)
    session_dir = Path(manager.store) / sid
    (out / "runlog.jsonl").write_bytes((session_dir / "runlog.jsonl").read_bytes())
    tree_doc = {"format_version": 1, "genome": best["genome"], "pool_id": best["pool_id"]}
    (out / "best_tree.json").write_text(json.dumps(tree_doc, indent=1, sort_keys=True))
    history = manager.get_history(sid)
    summary = {
        "seed": seed,
        "generations": history[-1]["generation"] if history else 0,
        "episodes": history[-1]["episodes"] if history else 0,
        "best_fitness": best["fitness"],
        "solved": best["solved"],
        "genome": best["genome"],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


def _run_one(args: tuple[dict[str, Any], int, str]) -> dict[str, Any]:
    config, seed, out_dir = args
    return run_experiment(config, seed, out_dir)


def aggregate_runs(out_dir: str | Path, seeds: list[int]) -> None:
    """Per-generation mean/median of best fitness across seeds, as CSV."""
    out = Path(out_dir)
    histories = []
    for seed in seeds:
        lines = (out / f"seed_{seed}" / "runlog.jsonl").read_text().splitlines()
        histories.append([json.loads(x) for x in lines])
    n_gens = min(len(h) for h in histories)
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "best_mean", "best_median", "mean_mean"])
        for g in range(n_gens):
            bests = [h[g]["best_fitness"] for h in histories]
            means = [h[g]["mean_fitness"] for h in histories]
            w.writerow(
                [
                    histories[0][g]["generation"],
                    round(statistics.mean(bests), 6),
                    round(statistics.median(bests), 6),
                    round(statistics.mean(means), 6),
                ]
            )


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_experiment_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    seeds = _parse_seeds(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    work = [(config, seed, str(out)) for seed in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_run_one, work))
    else:
        summaries = [_run_one(w) for w in work]
    aggregate_runs(out, seeds)
    solved = sum(1 for s in summaries if s["solved"])
    (out / "aggregate.json").write_text(
        json.dumps({"seeds": seeds, "solved_count": solved,
                    "summaries": summaries}, indent=1, sort_keys=True)
    )
    for s in summaries:
        print(f"seed {s['seed']}: best={s['best_fitness']:.3f} solved={s['solved']} "
              f"episodes={s['episodes']}")
    print(f"solved {solved}/{len(seeds)} runs; artifacts in {out}")
    return EXIT_OK if solved > 0 else EXIT_UNSOLVED


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        doc = json.loads(Path(args.tree).read_text())
        genome = doc["genome"]
        tree = BehaviorTree.from_text(genome)
    except (OSError, ValueError, KeyError, BtLearnError) as e:
        print(f"tree file error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        scenario = resolve_scenario(args.scenario)
    except BtLearnError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    registry = Registry.for_scenario(scenario)
    state = reset(scenario, args.seed)
    state.install_subgoals(scenario.goal.subgoals)
    result = run_episode(tree, state, registry, max_ticks=args.max_ticks)
    distance = state.goal_distance_mm(scenario.goal)
    solved = result.status is Status.SUCCESS and state.goal_reached(scenario.goal)
    print(f"status={result.status.value} ticks={result.ticks} timed_out={result.timed_out} "
          f"goal_distance_mm={distance:.3f} solved={solved}")
    return EXIT_OK if solved else EXIT_UNSOLVED


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    manager = SessionManager(args.store)
    app = create_app(manager, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def _parse_seeds(spec: str) -> list[int]:
    if "," in spec:
        return [int(s) for s in spec.split(",") if s.strip() != ""]
    return list(range(int(spec)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="btlearn")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scripted experiment over seeds")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seeds", default="10", help="count (e.g. 10) or list (e.g. 0,3,7)")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.set_defaults(fn=cmd_run)

    p_replay = sub.add_parser("replay", help="run a saved tree once")
    p_replay.add_argument("--tree", required=True)
    p_replay.add_argument("--scenario", required=True)
    p_replay.add_argument("--seed", type=int, default=0)
    p_replay.add_argument("--max-ticks", type=int, default=300)
    p_replay.set_defaults(fn=cmd_replay)

    p_serve = sub.add_parser("serve", help="serve the session API (and UI if built)")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8321)
    p_serve.add_argument("--store", default="./btlearn_sessions")
    p_serve.add_argument("--frontend", default=None)
    p_serve.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

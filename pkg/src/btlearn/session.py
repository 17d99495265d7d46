"""Interactive sessions: alternate evolution and demonstration, persist state.

A session owns one scenario, one evolving population, and the demos the user
has provided.  Evolution runs on a per-session worker thread and honors pause
requests at generation boundaries; every generation is checkpointed, so a
reloaded session continues bit-for-bit where it stopped.  All session data
lives in one directory per session: config, latest checkpoint, demo
documents, a run log and an append-only event log.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from queue import Queue
from typing import Any, Callable

import yaml

from . import bt, gp, lfd
from .assets import resolve_scenario
from .bt import BehaviorTree, Status
from .errors import (
    ConfigError,
    InvalidPhaseTransition,
    UnknownSession,
)
from .gp import (
    EvalContext,
    EvolutionState,
    FitnessParams,
    FIRST_CHILD_OF_ROOT,
    GpConfig,
)
from .pool import Registry, WorldEnvironment
from .world import GoalSpec, ScenarioConfig, Subgoal, reset

IDLE = "idle"
EVOLVING = "evolving"
PAUSED = "paused"
DEMONSTRATING = "demonstrating"

DEFAULT_SUBGOAL_BONUS = 100.0
# fresh starts re-seed the evolution rng so restarted runs do not replay
# the discarded population's random stream
FRESH_START_SEED_STRIDE = 1000


@dataclass
class DemoFlags:
    goal_mode: str = "extend"  # extend | replace | keep
    subgoal_bonus: float | None = None
    insertion_hint: bool = False
    fresh_start: bool = False

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DemoFlags":
        return cls(
            goal_mode=d.get("goal_mode", "extend"),
            subgoal_bonus=(float(d["subgoal_bonus"]) if d.get("subgoal_bonus") is not None else None),
            insertion_hint=bool(d.get("insertion_hint", False)),
            fresh_start=bool(d.get("fresh_start", False)),
        )


class Session:
    """In-memory handle plus on-disk layout for one run."""

    def __init__(self, sid: str, root: Path, scenario: ScenarioConfig,
                 gp_config: GpConfig, params: FitnessParams):
        self.id = sid
        self.root = root
        self.scenario = scenario
        self.gp_config = gp_config
        self.params = params
        self.goal: GoalSpec = scenario.goal
        self.registry = Registry.for_scenario(scenario)
        self.state: EvolutionState = gp.init_state(self.registry, gp_config)
        self.phase = IDLE
        self.generations_remaining = 0
        self.demo_files: list[str] = []
        self.lock = threading.RLock()
        self.worker: threading.Thread | None = None
        self.pause_requested = False
        self.subscribers: list[Queue] = []
        self.event_seq = 0

    # -- persistence --------------------------------------------------------

    def save(self) -> None:
        doc = {
            "format_version": 1,
            "id": self.id,
            "scenario": self.scenario.to_dict(),
            "gp_config": self.gp_config.to_dict(),
            "fitness_params": self.params.to_dict(),
            "goal": self.goal.to_dict(),
            "phase": self.phase if self.phase != EVOLVING else PAUSED,
            "generations_remaining": self.generations_remaining,
            "demo_files": self.demo_files,
            "event_seq": self.event_seq,
        }
        _atomic_write(self.root / "session.json", json.dumps(doc, sort_keys=True, indent=1))
        _atomic_write(self.root / "state.json", json.dumps(self.state.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, root: Path) -> "Session":
        doc = json.loads((root / "session.json").read_text())
        scenario = ScenarioConfig.from_dict(doc["scenario"])
        s = cls(
            doc["id"], root, scenario,
            GpConfig.from_dict(doc["gp_config"]),
            FitnessParams.from_dict(doc["fitness_params"]),
        )
        s.goal = GoalSpec.from_dict(doc["goal"])
        s.phase = doc["phase"]
        s.generations_remaining = int(doc["generations_remaining"])
        s.demo_files = list(doc["demo_files"])
        s.event_seq = int(doc.get("event_seq", 0))
        s.state = EvolutionState.from_dict(json.loads((root / "state.json").read_text()))
        return s

    def ctx(self) -> EvalContext:
        return EvalContext(
            scenario=self.scenario,
            goal=self.goal,
            params=self.params,
            tick_budget=self.gp_config.tick_budget,
            scenario_seed=self.state.scenario_seed,
        )

    def demos(self) -> list[lfd.Demonstration]:
        return [lfd.load_demo(self.root / "demos" / name) for name in self.demo_files]


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


class SessionManager:
    """Creates, persists, and drives sessions; one evolution worker each."""

    def __init__(self, store_dir: str | Path):
        self.store = Path(store_dir)
        self.store.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, Session] = {}

    # -- lifecycle -------------------------------------------------------------

    def create_session(self, scenario_ref: str, configs: dict[str, Any] | None = None,
                       session_id: str | None = None) -> str:
        scenario = resolve_scenario(scenario_ref)
        configs = configs or {}
        gp_config = GpConfig.from_dict(configs.get("gp", {}))
        params = FitnessParams.from_dict(configs.get("fitness", {}))
        sid = session_id or uuid.uuid4().hex[:12]
        root = self.store / sid
        (root / "demos").mkdir(parents=True, exist_ok=True)
        session = Session(sid, root, scenario, gp_config, params)
        self.sessions[sid] = session
        session.save()
        self._emit(session, {"type": "created", "phase": session.phase})
        return sid

    def get(self, sid: str) -> Session:
        session = self.sessions.get(sid)
        if session is None:
            root = self.store / sid
            if not (root / "session.json").exists():
                raise UnknownSession(sid)
            session = Session.load(root)
            self.sessions[sid] = session
        return session

    def list_sessions(self) -> list[str]:
        on_disk = {p.name for p in self.store.iterdir() if (p / "session.json").exists()}
        return sorted(on_disk | set(self.sessions))

    # -- evolution control --------------------------------------------------------

    def start_gp(self, sid: str, generations: int, wait: bool = False, jobs: int = 1) -> None:
        session = self.get(sid)
        with session.lock:
            if session.phase not in (IDLE, PAUSED):
                raise InvalidPhaseTransition(f"cannot start in phase {session.phase}")
            if generations <= 0:
                raise ValueError("generations must be positive")
            session.generations_remaining += generations
            self._launch(session, jobs)
        if wait:
            self.join(sid)

    def pause_gp(self, sid: str) -> None:
        session = self.get(sid)
        with session.lock:
            if session.phase != EVOLVING:
                raise InvalidPhaseTransition(f"cannot pause in phase {session.phase}")
            session.pause_requested = True

    def resume_gp(self, sid: str, wait: bool = False, jobs: int = 1) -> None:
        session = self.get(sid)
        with session.lock:
            if session.phase != PAUSED:
                raise InvalidPhaseTransition(f"cannot resume in phase {session.phase}")
            if session.generations_remaining <= 0:
                raise InvalidPhaseTransition("no generations pending; use start")
            self._launch(session, jobs)
        if wait:
            self.join(sid)

    def join(self, sid: str) -> None:
        session = self.get(sid)
        worker = session.worker
        if worker is not None:
            worker.join()

    def _launch(self, session: Session, jobs: int) -> None:
        session.phase = EVOLVING
        session.pause_requested = False
        self._emit(session, self._progress_event(session))
        session.worker = threading.Thread(
            target=self._run_worker, args=(session, jobs), daemon=True
        )
        session.worker.start()

    def _run_worker(self, session: Session, jobs: int) -> None:
        while True:
            with session.lock:
                if session.pause_requested or session.generations_remaining <= 0:
                    session.phase = PAUSED
                    session.pause_requested = False
                    session.save()
                    self._emit(session, self._progress_event(session))
                    return
            gp.step_generation(session.state, session.ctx(), session.registry,
                               session.gp_config, jobs=jobs)
            with session.lock:
                session.generations_remaining -= 1
                entry = session.state.history[-1]
                self._append_runlog(session, entry)
                session.save()
                self._emit(session, self._progress_event(session))

    def _progress_event(self, session: Session) -> dict[str, Any]:
        entry = session.state.history[-1] if session.state.history else None
        return {
            "type": "progress",
            "phase": session.phase,
            "generation": session.state.generation,
            "best_fitness": entry["best_fitness"] if entry else None,
            "mean_fitness": entry["mean_fitness"] if entry else None,
        }

    def _append_runlog(self, session: Session, entry: dict[str, Any]) -> None:
        with open(session.root / "runlog.jsonl", "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def _emit(self, session: Session, event: dict[str, Any]) -> None:
        session.event_seq += 1
        event = {"seq": session.event_seq, **event}
        with open(session.root / "events.jsonl", "a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
        for q in list(session.subscribers):
            q.put(event)

    def subscribe(self, sid: str) -> Queue:
        session = self.get(sid)
        q: Queue = Queue()
        session.subscribers.append(q)
        return q

    def unsubscribe(self, sid: str, q: Queue) -> None:
        session = self.get(sid)
        if q in session.subscribers:
            session.subscribers.remove(q)

    # -- demonstrations --------------------------------------------------------------

    def record_demo_script(self, sid: str, script: list[dict[str, Any]],
                           initial: dict[str, Any] | None = None,
                           seed: int | None = None) -> lfd.Demonstration:
        """Replay a pick/place script in a sandbox world and capture it."""
        session = self.get(sid)
        world_seed = session.state.scenario_seed if seed is None else seed
        state = reset(session.scenario, world_seed)
        if initial:
            state.apply_positions({k: tuple(v) for k, v in initial.items()})
        return lfd.record(state, script)

    def add_demonstration(self, sid: str, demo: lfd.Demonstration,
                          flags: DemoFlags | None = None) -> dict[str, Any]:
        session = self.get(sid)
        flags = flags or DemoFlags()
        with session.lock:
            if session.phase not in (IDLE, PAUSED):
                raise InvalidPhaseTransition(f"cannot add a demo in phase {session.phase}")
            session.phase = DEMONSTRATING
        try:
            name = f"demo_{len(session.demo_files):04d}.yaml"
            lfd.save_demo(demo, session.root / "demos" / name)
            session.demo_files.append(name)

            demos = session.demos()
            tree, constraints = lfd.plan_from_demos(demos, tolerance=session.scenario.tolerance)
            inferred = constraints.goal_spec(session.scenario.tolerance)

            if flags.goal_mode == "replace":
                session.goal = GoalSpec(targets=inferred.targets, subgoals=session.goal.subgoals)
            elif flags.goal_mode == "extend":
                session.goal = session.goal.extended(inferred)
            elif flags.goal_mode != "keep":
                raise ConfigError(f"unknown goal_mode {flags.goal_mode!r}")

            if flags.subgoal_bonus is not None:
                sub = Subgoal(
                    name=f"demo_{len(session.demo_files) - 1}",
                    targets=inferred.targets,
                    bonus=flags.subgoal_bonus,
                )
                session.goal = session.goal.with_subgoal(sub)

            if flags.fresh_start:
                cfg = session.gp_config
                restart = GpConfig.from_dict(
                    {**cfg.to_dict(), "seed": cfg.seed + FRESH_START_SEED_STRIDE * len(session.demo_files)}
                )
                session.state = gp.init_state(session.registry, restart,
                                              scenario_seed=session.state.scenario_seed)
            session.state.invalidate_fitness()
            gp.seed_baseline(session.state, tree, session.gp_config)
            if flags.insertion_hint:
                session.state.insertion_hint = FIRST_CHILD_OF_ROOT

            result = {
                "demo_file": name,
                "baseline": tree.text(),
                "inferred_goals": [t.to_dict() for t in inferred.targets],
                "goal": session.goal.to_dict(),
            }
            self._emit(session, {"type": "demonstration", "demo_file": name})
            return result
        finally:
            with session.lock:
                session.phase = PAUSED if session.state.history else IDLE
                session.save()

    def update_goal(self, sid: str, mode: str, extra: GoalSpec) -> dict[str, Any]:
        """Change the target without a demonstration (control-arm flows)."""
        session = self.get(sid)
        with session.lock:
            if session.phase not in (IDLE, PAUSED):
                raise InvalidPhaseTransition(f"cannot change goal in phase {session.phase}")
            if mode == "extend":
                session.goal = session.goal.extended(extra)
            elif mode == "replace":
                session.goal = GoalSpec(targets=extra.targets, subgoals=session.goal.subgoals)
            else:
                raise ConfigError(f"unknown goal update mode {mode!r}")
            session.state.invalidate_fitness()
            session.save()
            self._emit(session, {"type": "goal_updated"})
            return {"goal": session.goal.to_dict()}

    # -- read-only views -----------------------------------------------------------------

    def describe(self, sid: str) -> dict[str, Any]:
        session = self.get(sid)
        entry = session.state.history[-1] if session.state.history else None
        return {
            "id": session.id,
            "phase": session.phase,
            "scenario": session.scenario.to_dict(),
            "goal": session.goal.to_dict(),
            "generation": session.state.generation,
            "generations_remaining": session.generations_remaining,
            "episodes": session.state.episodes,
            "demos": list(session.demo_files),
            "best_fitness": entry["best_fitness"] if entry else None,
            "initial_world": reset(session.scenario, session.state.scenario_seed).snapshot(),
            "pool_size": len(session.registry),
        }

    def get_best_tree(self, sid: str) -> dict[str, Any]:
        session = self.get(sid)
        if not session.state.history or any(
            i.fitness is None for i in session.state.population
        ):
            gp.ensure_initialized(session.state, session.ctx(), session.registry)
            session.save()
        best = session.state.best()
        tree = best.tree()
        return {
            "genome": best.text,
            "fitness": best.fitness,
            "status": best.status,
            "distance_mm": best.distance_mm,
            "solved": best.solved,
            "size": tree.size(),
            "tree": tree_json(tree, session.registry),
            "pool_id": session.registry.pool_id,
        }

    def get_history(self, sid: str) -> list[dict[str, Any]]:
        return list(self.get(sid).state.history)

    def run_tree(self, sid: str, genome_text: str | None = None,
                 max_ticks: int | None = None) -> dict[str, Any]:
        """One sandbox episode with per-tick node statuses and world snapshots."""
        session = self.get(sid)
        if genome_text is None:
            genome_text = self.get_best_tree(sid)["genome"]
        tree = BehaviorTree.from_text(genome_text)
        budget = max_ticks or session.gp_config.tick_budget
        state = reset(session.scenario, session.state.scenario_seed)
        state.install_subgoals(session.goal.subgoals)
        env = WorldEnvironment(state, session.registry)
        ticks: list[dict[str, Any]] = [{"statuses": {}, "world": state.snapshot()}]
        status = Status.RUNNING
        n = 0
        for n in range(1, budget + 1):
            trace: dict[int, Status] = {}
            status = bt.tick(tree, env, trace=trace)
            ticks.append(
                {
                    "statuses": {str(k): v.value for k, v in trace.items()},
                    "world": state.snapshot(),
                }
            )
            if status is not Status.RUNNING:
                break
        return {
            "status": status.value,
            "ticks": n,
            "timed_out": status is Status.RUNNING,
            "goal_distance_mm": state.goal_distance_mm(session.goal),
            "solved": status is Status.SUCCESS and state.goal_reached(session.goal),
            "tree": tree_json(tree, session.registry),
            "per_tick": ticks,
        }


def tree_json(tree: BehaviorTree, registry: Registry | None = None) -> dict[str, Any]:
    """Nested node-link structure; gene subtrees carry their pool id."""
    gene_of: dict[int, str] = {}
    if registry is not None:
        from .gp import _gene_boundaries

        roots, _ = _gene_boundaries(tree.root, registry)
        texts = {id(n): " ".join(bt.serialize(n)) for n in bt.preorder(tree.root)}
        gene_of = {
            nid: registry.fragment_index[texts[nid]]
            for nid in roots
            if texts[nid] in registry.fragment_index
        }
    counter = {"i": 0}

    def walk(node: bt.Node) -> dict[str, Any]:
        nid = counter["i"]
        counter["i"] += 1
        out: dict[str, Any] = {"id": nid, "kind": node.kind.value}
        if node.behavior_id:
            out["behavior_id"] = node.behavior_id
        if id(node) in gene_of:
            out["gene"] = gene_of[id(node)]
        if node.children:
            out["children"] = [walk(c) for c in node.children]
        return out

    return walk(tree.root)

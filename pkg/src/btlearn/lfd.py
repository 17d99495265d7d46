"""Turn demonstrations into behavior trees.

A demonstration is an ordered list of pick/place actions executed in the
simulator.  Every place records the settled object position re-expressed in
each candidate reference frame.  Clustering matching actions across demos
picks, per action, the frame with the least positional spread (three or more
demos required, base frame otherwise); the final configuration becomes the
goal; backchaining expands each goal condition into the pick&place subtree
shape until only primitive checks remain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any

import yaml

from . import bt
from .bt import BehaviorTree, Node, Status
from .errors import (
    ConfigError,
    InconsistentDemos,
    InvalidAction,
    NoAchievingAction,
)
from .pool import achiever_for, at_token, preconditions_of
from .world import BASE_FRAME, GoalSpec, GoalTarget, Vec3, WorldState, dist, reset


@dataclass
class DemoAction:
    action_type: str  # "pick" | "place"
    obj: str
    order: int
    # place only: settled object centroid expressed in every candidate frame
    positions: dict[str, Vec3] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"type": self.action_type, "object": self.obj, "order": self.order}
        if self.positions:
            d["positions"] = {f: [round(v, 9) for v in p] for f, p in self.positions.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DemoAction":
        return cls(
            action_type=d["type"],
            obj=d["object"],
            order=int(d["order"]),
            positions={f: tuple(p) for f, p in d.get("positions", {}).items()},
        )


@dataclass
class Demonstration:
    scenario: str
    seed: int
    actions: list[DemoAction]
    initial: dict[str, Vec3] = field(default_factory=dict)  # overrides on reset
    final: dict[str, Vec3] = field(default_factory=dict)

    def moved_objects(self) -> list[str]:
        seen: list[str] = []
        for a in self.actions:
            if a.action_type == "place" and a.obj not in seen:
                seen.append(a.obj)
        return seen

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": 1,
            "scenario": self.scenario,
            "seed": self.seed,
            "initial": {n: [round(v, 9) for v in p] for n, p in self.initial.items()},
            "actions": [a.to_dict() for a in self.actions],
            "final": {n: [round(v, 9) for v in p] for n, p in self.final.items()},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Demonstration":
        try:
            return cls(
                scenario=d["scenario"],
                seed=int(d.get("seed", 0)),
                actions=[DemoAction.from_dict(a) for a in d["actions"]],
                initial={n: tuple(p) for n, p in d.get("initial", {}).items()},
                final={n: tuple(p) for n, p in d.get("final", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad demonstration document: {e}") from e


def save_demo(demo: Demonstration, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(demo.to_dict(), sort_keys=False))


def load_demo(path: str | Path) -> Demonstration:
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return Demonstration.from_dict(data)


# -- recording ------------------------------------------------------------------


class DemoRecorder:
    """Single-writer capture of one live demonstration."""

    def __init__(self, state: WorldState):
        self.state = state
        self.scenario = state.scenario.name
        self.seed = state.seed
        self.initial = {o.name: o.pose for o in state.movables()}
        self.actions: list[DemoAction] = []

    def pick(self, obj: str) -> DemoAction:
        if self.state.apply_pick(obj) is not Status.SUCCESS:
            raise InvalidAction(f"cannot pick {obj} now")
        act = DemoAction("pick", obj, order=len(self.actions))
        self.actions.append(act)
        return act

    def place(self, release: Vec3, frame: str = BASE_FRAME) -> DemoAction:
        obj = self.state.holding
        if not obj:
            raise InvalidAction("cannot place: gripper is empty")
        self.state.apply_place(release, frame)
        positions = {
            f: self.state.express_in(self.state.objects[obj].pose, f)
            for f in self.state.frames()
            if f != obj
        }
        act = DemoAction("place", obj, order=len(self.actions), positions=positions)
        self.actions.append(act)
        return act

    def finish(self) -> Demonstration:
        if not self.actions:
            raise InvalidAction("demonstration is empty")
        return Demonstration(
            scenario=self.scenario,
            seed=self.seed,
            actions=list(self.actions),
            initial=dict(self.initial),
            final={o.name: o.pose for o in self.state.movables()},
        )


def record(state: WorldState, script: list[dict[str, Any]]) -> Demonstration:
    """Run a scripted action stream against a world and capture it."""
    rec = DemoRecorder(state)
    for step in script:
        kind = step.get("type")
        if kind == "pick":
            rec.pick(step["object"])
        elif kind == "place":
            r = step["release"]
            release = (float(r[0]), float(r[1]), float(r[2]) if len(r) > 2 else 0.0)
            rec.place(release, step.get("frame", BASE_FRAME))
        else:
            raise InvalidAction(f"unknown demo action type: {kind!r}")
    return rec.finish()


def demo_world(demo: Demonstration, scenario) -> WorldState:
    """World positioned at the demo's initial configuration."""
    state = reset(scenario, demo.seed)
    if demo.initial:
        state.apply_positions(demo.initial)
    return state


def replay_matches(demo: Demonstration, scenario, tol: float = 1e-6) -> bool:
    """Replaying the recorded actions reproduces the final snapshot."""
    state = demo_world(demo, scenario)
    for act in demo.actions:
        if act.action_type == "pick":
            if state.apply_pick(act.obj) is not Status.SUCCESS:
                return False
        else:
            target = act.positions.get(BASE_FRAME)
            if target is None or state.apply_place(target, BASE_FRAME) is not Status.SUCCESS:
                return False
    return all(
        dist(state.objects[name].pose, pos) <= tol for name, pos in demo.final.items()
    )


# -- clustering -------------------------------------------------------------------


@dataclass
class ActionCluster:
    action_type: str
    obj: str
    rank: int  # occurrence index of (type, object) within each demo
    members: list[DemoAction]
    frame: str = BASE_FRAME
    representative: Vec3 | None = None
    dispersion: float = 0.0

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.action_type, self.obj, self.rank)


MIN_DEMOS_FOR_FRAME = 3


def cluster(demos: list[Demonstration]) -> list[ActionCluster]:
    """Group matching actions across demos and infer their reference frames."""
    if not demos:
        raise InconsistentDemos("need at least one demonstration")
    groups: dict[tuple[str, str, int], list[DemoAction]] = {}
    order_of_key: list[tuple[str, str, int]] = []
    for demo in demos:
        ranks: dict[tuple[str, str], int] = {}
        for act in demo.actions:
            if act.action_type not in ("pick", "place"):
                raise InconsistentDemos(f"unknown action type {act.action_type!r}")
            r = ranks.get((act.action_type, act.obj), 0)
            ranks[(act.action_type, act.obj)] = r + 1
            key = (act.action_type, act.obj, r)
            if key not in groups:
                groups[key] = []
                order_of_key.append(key)
            groups[key].append(act)
    clusters = []
    for key in order_of_key:
        members = groups[key]
        c = ActionCluster(key[0], key[1], key[2], members)
        if c.action_type == "place":
            c.frame, c.representative, c.dispersion = _infer_frame(members)
        clusters.append(c)
    return clusters


def _dispersion(points: list[Vec3]) -> float:
    if len(points) < 2:
        return 0.0
    return max(dist(a, b) for a, b in combinations(points, 2))


def _infer_frame(members: list[DemoAction]) -> tuple[str, Vec3, float]:
    common = set(members[0].positions)
    for m in members[1:]:
        common &= set(m.positions)
    if BASE_FRAME not in common:
        raise InconsistentDemos("place action lacks a base-frame position")
    if len(members) < MIN_DEMOS_FOR_FRAME:
        frame = BASE_FRAME
    else:
        best = (math.inf, "")
        # base first so that exact ties resolve toward it
        for frame_name in sorted(common, key=lambda f: (f != BASE_FRAME, f)):
            d = _dispersion([m.positions[frame_name] for m in members])
            if d < best[0] - 1e-12:
                best = (d, frame_name)
        frame = best[1]
    pts = [m.positions[frame] for m in members]
    rep = tuple(sum(p[i] for p in pts) / len(pts) for i in range(3))
    return frame, rep, _dispersion(pts)


# -- goals and ordering ---------------------------------------------------------------


@dataclass
class TaskConstraints:
    goals: list[GoalTarget]
    # (a, b) means the goal for object a must be pursued before object b's
    order: list[tuple[str, str]]
    clusters: list[ActionCluster]

    def goal_spec(self, tolerance: float) -> GoalSpec:
        return GoalSpec(
            targets=tuple(
                GoalTarget(g.obj, g.position, g.frame, tolerance) for g in self.goals
            )
        )

    def ordered_goals(self) -> list[GoalTarget]:
        return _topo_sort(self.goals, self.order)


def _topo_sort(goals: list[GoalTarget], order: list[tuple[str, str]]) -> list[GoalTarget]:
    names = [g.obj for g in goals]
    after: dict[str, set[str]] = {n: set() for n in names}
    for a, b in order:
        if a in after and b in after:
            after[b].add(a)
    out: list[GoalTarget] = []
    remaining = list(goals)
    while remaining:
        ready = [g for g in remaining if not (after[g.obj] - {x.obj for x in out})]
        if not ready:
            raise InconsistentDemos("cyclic ordering constraints across demonstrations")
        out.append(ready[0])  # stable: first-demo appearance order
        remaining.remove(ready[0])
    return out


def infer_goals(demos: list[Demonstration], tolerance: float = 0.01) -> TaskConstraints:
    """Goal conditions from final placements plus order constraints common to all demos."""
    clusters_ = cluster(demos)
    places = [c for c in clusters_ if c.action_type == "place"]
    last_place: dict[str, ActionCluster] = {}
    for c in places:
        cur = last_place.get(c.obj)
        if cur is None or c.rank > cur.rank:
            last_place[c.obj] = c
    goals = [
        GoalTarget(c.obj, tuple(round(v, 9) for v in c.representative), c.frame, tolerance)
        for c in (last_place[o] for o in _first_seen(places))
    ]
    order = _common_order(demos, last_place)
    return TaskConstraints(goals=goals, order=order, clusters=clusters_)


def _first_seen(places: list[ActionCluster]) -> list[str]:
    seen: list[str] = []
    for c in places:
        if c.obj not in seen:
            seen.append(c.obj)
    return seen


def _common_order(demos: list[Demonstration],
                  last_place: dict[str, ActionCluster]) -> list[tuple[str, str]]:
    objs = list(last_place)
    pairs = []
    for a, b in combinations(objs, 2):
        a_first = b_first = True
        seen_together = False
        for demo in demos:
            ia = _final_place_index(demo, a, last_place[a].rank)
            ib = _final_place_index(demo, b, last_place[b].rank)
            if ia is None or ib is None:
                continue
            seen_together = True
            if ia > ib:
                a_first = False
            else:
                b_first = False
        if seen_together and a_first:
            pairs.append((a, b))
        elif seen_together and b_first:
            pairs.append((b, a))
    return pairs


def _final_place_index(demo: Demonstration, obj: str, rank: int) -> int | None:
    r = 0
    for i, act in enumerate(demo.actions):
        if act.action_type == "place" and act.obj == obj:
            if r == rank:
                return i
            r += 1
    return None


# -- backchaining ------------------------------------------------------------------


def backchain(constraints: TaskConstraints, tolerance: float = 0.01) -> BehaviorTree:
    """Plan a tree that achieves every goal condition, in a compatible order.

    Each unmet condition becomes Fallback(condition, Sequence(preconditions…,
    achieving action)); preconditions recurse the same way until only terminal
    checks remain.
    """
    goals = constraints.ordered_goals()
    if not goals:
        raise NoAchievingAction("(no goals inferred)")
    subtrees = [
        _expand_condition(at_token(g.obj, g.position, g.frame), is_goal=True) for g in goals
    ]
    root = subtrees[0] if len(subtrees) == 1 else bt.sequence(*subtrees)
    tree = BehaviorTree(root)
    violations = tree.validate()
    if violations:  # planner contract: constructed form is always valid
        raise AssertionError(f"planned tree violates constraints: {violations}")
    return tree


def _expand_condition(condition: str, is_goal: bool = False) -> Node:
    action = achiever_for(condition)
    if action is None:
        if is_goal:
            raise NoAchievingAction(condition)
        return bt.behavior(condition)
    pre = [_expand_condition(p) for p in preconditions_of(action)]
    return bt.fallback(bt.behavior(condition), bt.sequence(*pre, bt.behavior(action)))


def plan_from_demos(demos: list[Demonstration], tolerance: float = 0.01) -> tuple[BehaviorTree, TaskConstraints]:
    constraints = infer_goals(demos, tolerance)
    return backchain(constraints, tolerance), constraints

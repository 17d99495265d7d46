"""Behavior registry: token grammar, composite pick&place genes, execution.

Every leaf behavior is an opaque whitespace-free token.  Conditions end in
``?``, actions in ``!``.  The grammar:

    pick(<obj>)!                      grasp an object (fails if buried/holding)
    place(<obj>,(<x>,<y>,<z>),<f>)!   release held object above a point in frame <f>
    ppa(<obj>,(<x>,<y>,<z>),<f>)!     composite gene: full pick&place subtree
    at(<obj>,(<x>,<y>,<z>),<f>)?      object centroid within tolerance of point
    holding(<obj>)?                   gripper holds that object
    holding_any?  gripper_empty?      gripper content checks
    gripper_open!  gripper_close!  drop_held!   bare gripper actions

The GP search space (the pool) is the set of ``ppa`` genes enumerated from a
scenario plus the five gripper behaviors.  Primitive pick/place/condition
tokens form the library used by planning and by demonstration-derived trees.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

from . import bt
from .bt import BehaviorTree, Status
from .errors import EmptyScenario, UnknownBehavior
from .world import BASE_FRAME, ScenarioConfig, Vec3, WorldState

GRIPPER_BEHAVIORS = (
    "gripper_open!",
    "gripper_close!",
    "holding_any?",
    "gripper_empty?",
    "drop_held!",
)

# horizontal offsets are one box side from the reference centroid; "top" is vertical
RELATIVE_POSITIONS = ("left", "right", "above", "below", "top")


def relative_offset(name: str, side: float) -> Vec3:
    return {
        "left": (-side, 0.0, 0.0),
        "right": (side, 0.0, 0.0),
        "above": (0.0, side, 0.0),
        "below": (0.0, -side, 0.0),
        "top": (0.0, 0.0, side),
    }[name]


# -- token spelling -----------------------------------------------------------


def fmt_num(v: float) -> str:
    v = round(float(v), 9)
    if v == 0:
        v = 0.0
    return repr(v)


def fmt_pos(p: Vec3) -> str:
    return f"({fmt_num(p[0])},{fmt_num(p[1])},{fmt_num(p[2])})"


def pick_token(obj: str) -> str:
    return f"pick({obj})!"


def place_token(obj: str, pos: Vec3, frame: str) -> str:
    return f"place({obj},{fmt_pos(pos)},{frame})!"


def ppa_token(obj: str, pos: Vec3, frame: str) -> str:
    return f"ppa({obj},{fmt_pos(pos)},{frame})!"


def at_token(obj: str, pos: Vec3, frame: str) -> str:
    return f"at({obj},{fmt_pos(pos)},{frame})?"


def holding_token(obj: str) -> str:
    return f"holding({obj})?"


_PICK_RE = re.compile(r"^pick\((\w+)\)!$")
_HOLDING_RE = re.compile(r"^holding\((\w+)\)\?$")
_TRIPLE_RE = re.compile(r"^(place|ppa|at)\((\w+),\(([^()]*)\),(\w+)\)([!?])$")


@dataclass(frozen=True)
class ParsedBehavior:
    op: str
    obj: str = ""
    position: Vec3 | None = None
    frame: str = ""


@lru_cache(maxsize=None)
def parse_behavior(token: str) -> ParsedBehavior | None:
    if token in ("gripper_open!", "gripper_close!", "drop_held!"):
        return ParsedBehavior(op=token[:-1])
    if token in ("holding_any?", "gripper_empty?"):
        return ParsedBehavior(op=token[:-1])
    m = _PICK_RE.match(token)
    if m:
        return ParsedBehavior(op="pick", obj=m.group(1))
    m = _HOLDING_RE.match(token)
    if m:
        return ParsedBehavior(op="holding", obj=m.group(1))
    m = _TRIPLE_RE.match(token)
    if m:
        op, obj, nums, frame, suffix = m.groups()
        if (op == "at") != (suffix == "?"):
            return None
        parts = nums.split(",")
        if len(parts) != 3:
            return None
        try:
            pos = tuple(float(x) for x in parts)
        except ValueError:
            return None
        return ParsedBehavior(op=op, obj=obj, position=pos, frame=frame)
    return None


# -- the Fig.-style pick&place subtree ----------------------------------------


def ppa_expansion(obj: str, pos: Vec3, frame: str) -> list[str]:
    """Genome fragment of the composite gene: achieve `obj at pos in frame`."""
    return [
        "f(",
        at_token(obj, pos, frame),
        "s(",
        "f(",
        holding_token(obj),
        "s(",
        "gripper_empty?",
        pick_token(obj),
        ")",
        ")",
        place_token(obj, pos, frame),
        ")",
        ")",
    ]


# -- templates and pool generation ----------------------------------------------


@dataclass(frozen=True)
class BehaviorTemplate:
    behavior_id: str
    kind: str  # "action" | "condition"
    label: str
    obj: str = ""
    position: Vec3 | None = None
    frame: str = ""
    preconditions: tuple[str, ...] = ()
    postconditions: tuple[str, ...] = ()
    expansion: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "behavior_id": self.behavior_id,
            "kind": self.kind,
            "label": self.label,
            "object": self.obj,
            "position": list(self.position) if self.position else None,
            "frame": self.frame,
            "preconditions": list(self.preconditions),
            "postconditions": list(self.postconditions),
            "expansion": list(self.expansion),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BehaviorTemplate":
        return cls(
            behavior_id=d["behavior_id"],
            kind=d["kind"],
            label=d["label"],
            obj=d.get("object") or "",
            position=tuple(d["position"]) if d.get("position") else None,
            frame=d.get("frame") or "",
            preconditions=tuple(d.get("preconditions", ())),
            postconditions=tuple(d.get("postconditions", ())),
            expansion=tuple(d.get("expansion", ())),
        )


@dataclass
class PoolConfig:
    relative_positions: tuple[str, ...] = RELATIVE_POSITIONS
    kit_cells: bool = True
    gripper_behaviors: tuple[str, ...] = GRIPPER_BEHAVIORS


def kit_cell_offsets(cells: int, pitch: float, rest_z: float) -> list[tuple[str, Vec3]]:
    """Cell-center targets in the kit frame, resting height ``rest_z``."""
    half = (cells - 1) // 2
    out = []
    for ix in range(cells):
        for iy in range(cells):
            name = f"cell_{ix}_{iy}"
            out.append((name, ((ix - half) * pitch, (iy - half) * pitch, rest_z)))
    return out


def generate_pool(scenario: ScenarioConfig, config: PoolConfig | None = None) -> list[BehaviorTemplate]:
    """Enumerate the GP gene pool for a scenario; pure in its inputs."""
    config = config or PoolConfig()
    movables = [o for o in scenario.objects if o.kind == "movable_box"]
    if not movables:
        raise EmptyScenario(scenario.name)
    kit = next((o for o in scenario.objects if o.kind == "kitting_box"), None)
    templates: list[BehaviorTemplate] = []
    for mv in movables:
        for ref in movables:
            if ref.name == mv.name:
                continue
            for pname in config.relative_positions:
                off = relative_offset(pname, mv.side)
                templates.append(_ppa_template(mv.name, off, ref.name, f"{mv.name} {pname} of {ref.name}"))
        if kit is not None and config.kit_cells:
            for cname, off in kit_cell_offsets(kit.cells, kit.pitch, mv.side / 2.0):
                templates.append(_ppa_template(mv.name, off, kit.name, f"{mv.name} to {kit.name} {cname}"))
    for g in config.gripper_behaviors:
        templates.append(
            BehaviorTemplate(
                behavior_id=g,
                kind="condition" if g.endswith("?") else "action",
                label=g.rstrip("!?").replace("_", " "),
                preconditions=("holding_any?",) if g == "drop_held!" else (),
                postconditions=("gripper_empty?",) if g in ("drop_held!", "gripper_open!") else (),
            )
        )
    return templates


def _ppa_template(obj: str, pos: Vec3, frame: str, label: str) -> BehaviorTemplate:
    return BehaviorTemplate(
        behavior_id=ppa_token(obj, pos, frame),
        kind="action",
        label=label,
        obj=obj,
        position=tuple(round(v, 9) for v in pos),
        frame=frame,
        postconditions=(at_token(obj, pos, frame),),
        expansion=tuple(ppa_expansion(obj, pos, frame)),
    )


# -- planner-facing descriptors -------------------------------------------------


def achiever_for(condition_token: str) -> str | None:
    """Library action whose post-condition is the given condition.

    ``gripper_empty?`` is deliberately terminal: it stays a bare check in
    planned trees instead of expanding into a drop action.
    """
    p = parse_behavior(condition_token)
    if p is None:
        return None
    if p.op == "at":
        return place_token(p.obj, p.position, p.frame)
    if p.op == "holding":
        return pick_token(p.obj)
    return None


def preconditions_of(action_token: str) -> list[str]:
    p = parse_behavior(action_token)
    if p is None:
        raise UnknownBehavior(action_token)
    if p.op == "place":
        return [holding_token(p.obj)]
    if p.op == "pick":
        return ["gripper_empty?"]
    if p.op == "drop_held":
        return ["holding_any?"]
    return []


# -- registry & execution --------------------------------------------------------


class Registry:
    """Immutable lookup of pool templates plus expansion trees."""

    def __init__(self, templates: list[BehaviorTemplate], pool_id: str = ""):
        self.templates = list(templates)
        self.by_id = {t.behavior_id: t for t in templates}
        self.pool_id = pool_id
        self._expansions: dict[str, BehaviorTree] = {}
        # genome fragment (as text) -> owning gene; used to treat inserted
        # gene subtrees as atomic units during mutation
        self.fragment_index: dict[str, str] = {
            " ".join(self.expand(t.behavior_id)): t.behavior_id for t in self.templates
        }

    def gene_fragments(self) -> list[tuple[str, ...]]:
        """Insertable genome fragments, one per pool gene, pool order."""
        return [tuple(self.expand(t.behavior_id)) for t in self.templates]

    def __len__(self) -> int:
        return len(self.templates)

    def __contains__(self, behavior_id: str) -> bool:
        return behavior_id in self.by_id

    def gene_ids(self) -> list[str]:
        return [t.behavior_id for t in self.templates]

    def expansion_tree(self, behavior_id: str) -> BehaviorTree:
        tree = self._expansions.get(behavior_id)
        if tree is None:
            tpl = self.by_id.get(behavior_id)
            if tpl is None or not tpl.expansion:
                raise UnknownBehavior(behavior_id)
            tree = BehaviorTree.from_tokens(list(tpl.expansion))
            self._expansions[behavior_id] = tree
        return tree

    def expand(self, behavior_id: str) -> list[str]:
        """Genome fragment for a gene: its expansion, or the single token."""
        tpl = self.by_id.get(behavior_id)
        if tpl is None:
            raise UnknownBehavior(behavior_id)
        return list(tpl.expansion) if tpl.expansion else [tpl.behavior_id]

    def manifest(self) -> dict[str, Any]:
        return {
            "pool_id": self.pool_id,
            "behaviors": [t.to_dict() for t in self.templates],
        }

    @classmethod
    def from_manifest(cls, manifest: dict[str, Any]) -> "Registry":
        return cls(
            [BehaviorTemplate.from_dict(d) for d in manifest["behaviors"]],
            pool_id=manifest.get("pool_id", ""),
        )

    @classmethod
    def for_scenario(cls, scenario: ScenarioConfig, config: PoolConfig | None = None) -> "Registry":
        return cls(generate_pool(scenario, config), pool_id=f"pool:{scenario.name}")


class WorldEnvironment:
    """Binds behavior tokens to one episode's world state."""

    def __init__(self, state: WorldState, registry: Registry,
                 tolerance: float | None = None, running_actions: bool = False):
        self.state = state
        self.registry = registry
        self.tolerance = state.scenario.tolerance if tolerance is None else tolerance
        self.running_actions = running_actions

    def _acted(self, status: Status) -> Status:
        if status is Status.SUCCESS and self.running_actions:
            return Status.RUNNING
        return status

    def execute(self, behavior_id: str) -> Status:
        if behavior_id in self.registry and self.registry.by_id[behavior_id].expansion:
            return bt.tick(self.registry.expansion_tree(behavior_id), self)
        p = parse_behavior(behavior_id)
        if p is None:
            raise UnknownBehavior(behavior_id)
        s = self.state
        if p.op == "pick":
            return self._acted(s.apply_pick(p.obj))
        if p.op == "place":
            return self._acted(s.apply_place(p.position, p.frame))
        if p.op == "drop_held":
            return self._acted(s.drop_held())
        if p.op == "gripper_open":
            if s.holding:
                return self._acted(s.drop_held())
            return Status.SUCCESS
        if p.op == "gripper_close":
            return Status.SUCCESS
        if p.op == "at":
            ok = s.object_at(p.obj, p.position, p.frame, self.tolerance)
            return Status.SUCCESS if ok else Status.FAILURE
        if p.op == "holding":
            return Status.SUCCESS if s.holding == p.obj else Status.FAILURE
        if p.op == "holding_any":
            return Status.SUCCESS if s.holding else Status.FAILURE
        if p.op == "gripper_empty":
            return Status.SUCCESS if not s.holding else Status.FAILURE
        raise UnknownBehavior(behavior_id)


def run_episode(tree: BehaviorTree, state: WorldState, registry: Registry,
                max_ticks: int = 300, running_actions: bool = False) -> bt.EpisodeResult:
    """Run one episode of a tree against a world; counts ticks on the state."""
    env = WorldEnvironment(state, registry, running_actions=running_actions)

    def count(_tick: int, _status: Status) -> None:
        state.ticks += 1

    return bt.run_to_completion(tree, env, max_ticks=max_ticks, on_tick=count)

"""Physics-lite kitting world: boxes, frames, teleporting gripper, stacking.

Simulates only what the tasks need: axis-aligned boxes on an (effectively
unbounded) table, a kitting box modeled as a raised floor with a grid of
target cells, support/stacking resolution under gravity, and a gripper that
teleports.  One action equals one world step; motion takes no simulated time.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Any

from .bt import Status
from .errors import (
    ConfigError,
    OverlappingInitialPlacement,
    UnknownFrame,
    UnknownObject,
)

Vec3 = tuple[float, float, float]

MOVABLE = "movable_box"
KITTING = "kitting_box"
TABLE = "table"

BASE_FRAME = "base"
TABLE_NAME = "Table"

DEFAULT_SIDE = 0.05
DEFAULT_TOLERANCE = 0.01
KIT_FLOOR_HEIGHT = 0.01
CARRY_Z = 0.30
SKY_Z = 1.0
# minimum footprint-overlap fraction for one box to rest on another
SUPPORT_OVERLAP = 0.5
_EPS = 1e-9


def dist(a: Vec3, b: Vec3) -> float:
    return math.dist(a, b)


# -- goal specification -------------------------------------------------------


@dataclass(frozen=True)
class GoalTarget:
    obj: str
    position: Vec3
    frame: str = BASE_FRAME
    tolerance: float = DEFAULT_TOLERANCE

    def to_dict(self) -> dict[str, Any]:
        return {
            "object": self.obj,
            "position": list(self.position),
            "frame": self.frame,
            "tolerance": self.tolerance,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GoalTarget":
        return cls(
            obj=d["object"],
            position=tuple(float(v) for v in d["position"]),
            frame=d.get("frame", BASE_FRAME),
            tolerance=float(d.get("tolerance", DEFAULT_TOLERANCE)),
        )


@dataclass(frozen=True)
class Subgoal:
    """Intermediate configuration worth a fitness bonus once reached."""

    name: str
    targets: tuple[GoalTarget, ...]
    bonus: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "targets": [t.to_dict() for t in self.targets],
            "bonus": self.bonus,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Subgoal":
        return cls(
            name=d["name"],
            targets=tuple(GoalTarget.from_dict(t) for t in d["targets"]),
            bonus=float(d["bonus"]),
        )


@dataclass(frozen=True)
class GoalSpec:
    targets: tuple[GoalTarget, ...] = ()
    subgoals: tuple[Subgoal, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "targets": [t.to_dict() for t in self.targets],
            "subgoals": [s.to_dict() for s in self.subgoals],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GoalSpec":
        return cls(
            targets=tuple(GoalTarget.from_dict(t) for t in d.get("targets", [])),
            subgoals=tuple(Subgoal.from_dict(s) for s in d.get("subgoals", [])),
        )

    def extended(self, extra: "GoalSpec") -> "GoalSpec":
        """Append targets for objects this goal does not yet constrain."""
        have = {t.obj for t in self.targets}
        new = tuple(t for t in extra.targets if t.obj not in have)
        return GoalSpec(self.targets + new, self.subgoals + extra.subgoals)

    def with_subgoal(self, sub: Subgoal) -> "GoalSpec":
        return GoalSpec(self.targets, self.subgoals + (sub,))


# -- scenario configuration ---------------------------------------------------


@dataclass
class ObjectSpec:
    name: str
    kind: str = MOVABLE
    side: float = DEFAULT_SIDE
    cells: int = 3
    pitch: float = DEFAULT_SIDE
    floor_height: float = KIT_FLOOR_HEIGHT
    # exactly one of: fixed (x, y), stack target, or sampling region
    at: tuple[float, float] | None = None
    on: str | None = None
    sample: dict[str, tuple[float, float]] | None = None


@dataclass
class ScenarioConfig:
    name: str
    objects: list[ObjectSpec]
    goal: GoalSpec
    tolerance: float = DEFAULT_TOLERANCE
    table: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {"x": (-0.45, 0.45), "y": (-0.45, 0.45)}
    )

    def movable_names(self) -> list[str]:
        return [o.name for o in self.objects if o.kind == MOVABLE]

    def kit_name(self) -> str | None:
        for o in self.objects:
            if o.kind == KITTING:
                return o.name
        return None

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        try:
            objects = []
            for od in d["objects"]:
                place = od.get("place", {})
                objects.append(
                    ObjectSpec(
                        name=od["name"],
                        kind=od.get("kind", MOVABLE),
                        side=float(od.get("side", DEFAULT_SIDE)),
                        cells=int(od.get("cells", 3)),
                        pitch=float(od.get("pitch", DEFAULT_SIDE)),
                        floor_height=float(od.get("floor_height", KIT_FLOOR_HEIGHT)),
                        at=tuple(place["at"]) if "at" in place else None,
                        on=place.get("stack_on"),
                        sample={k: tuple(v) for k, v in place["sample"].items()}
                        if "sample" in place
                        else None,
                    )
                )
            goal = GoalSpec.from_dict(d.get("goal", {}))
            table = {k: tuple(v) for k, v in d.get("table", {}).items()} or None
            cfg = cls(
                name=d["name"],
                objects=objects,
                goal=goal,
                tolerance=float(d.get("tolerance", DEFAULT_TOLERANCE)),
            )
            if table:
                cfg.table = table
            return cfg
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad scenario config: {e}") from e

    def to_dict(self) -> dict[str, Any]:
        objs = []
        for o in self.objects:
            place: dict[str, Any] = {}
            if o.at is not None:
                place["at"] = list(o.at)
            if o.on is not None:
                place["stack_on"] = o.on
            if o.sample is not None:
                place["sample"] = {k: list(v) for k, v in o.sample.items()}
            od: dict[str, Any] = {"name": o.name, "kind": o.kind, "place": place}
            if o.kind == MOVABLE:
                od["side"] = o.side
            if o.kind == KITTING:
                od.update(cells=o.cells, pitch=o.pitch, floor_height=o.floor_height)
            objs.append(od)
        return {
            "name": self.name,
            "tolerance": self.tolerance,
            "table": {k: list(v) for k, v in self.table.items()},
            "objects": objs,
            "goal": self.goal.to_dict(),
        }


# -- world state --------------------------------------------------------------


@dataclass
class SceneObject:
    name: str
    kind: str
    side: float
    pose: Vec3
    supported_by: str = TABLE_NAME
    cells: int = 3
    pitch: float = DEFAULT_SIDE

    @property
    def footprint_half(self) -> float:
        if self.kind == KITTING:
            return self.cells * self.pitch / 2.0
        return self.side / 2.0

    @property
    def top(self) -> float:
        if self.kind == KITTING:
            return self.pose[2]  # pose anchors the floor-top surface
        if self.kind == TABLE:
            return 0.0
        return self.pose[2] + self.side / 2.0


def _overlap_fraction(box: SceneObject, other: SceneObject) -> float:
    """Horizontal footprint intersection as a fraction of ``box``'s footprint."""
    bh, oh = box.footprint_half, other.footprint_half
    dx = min(box.pose[0] + bh, other.pose[0] + oh) - max(box.pose[0] - bh, other.pose[0] - oh)
    dy = min(box.pose[1] + bh, other.pose[1] + oh) - max(box.pose[1] - bh, other.pose[1] - oh)
    if dx <= 0 or dy <= 0:
        return 0.0
    return (dx * dy) / (2 * bh * 2 * bh)


class WorldState:
    """Mutable state of one episode; confined to a single worker."""

    def __init__(self, scenario: ScenarioConfig, seed: int):
        self.scenario = scenario
        self.seed = seed
        self.objects: dict[str, SceneObject] = {}
        self.holding: str = ""
        self.gripper_pos: Vec3 = (0.0, 0.0, CARRY_Z)
        self.ticks = 0
        self.steps = 0
        self.subgoals: tuple[Subgoal, ...] = ()
        self.satisfied_subgoals: set[str] = set()

    # -- frames ---------------------------------------------------------------

    def frame_origin(self, frame: str) -> Vec3:
        if frame == BASE_FRAME:
            return (0.0, 0.0, 0.0)
        obj = self.objects.get(frame)
        if obj is None or obj.kind == TABLE:
            raise UnknownFrame(frame)
        return obj.pose

    def frames(self) -> list[str]:
        """Candidate reference frames: base plus every non-table object."""
        return [BASE_FRAME] + [o.name for o in self.objects.values() if o.kind != TABLE]

    def resolve(self, position: Vec3, frame: str) -> Vec3:
        ox, oy, oz = self.frame_origin(frame)
        return (ox + position[0], oy + position[1], oz + position[2])

    def express_in(self, point: Vec3, frame: str) -> Vec3:
        ox, oy, oz = self.frame_origin(frame)
        return (point[0] - ox, point[1] - oy, point[2] - oz)

    # -- queries ----------------------------------------------------------------

    def movables(self) -> list[SceneObject]:
        return [o for o in self.objects.values() if o.kind == MOVABLE]

    def object_at(self, name: str, position: Vec3, frame: str, tol: float) -> bool:
        if tol <= 0:
            raise ValueError("tolerance must be positive")
        obj = self.objects.get(name)
        if obj is None:
            raise UnknownObject(name)
        return dist(obj.pose, self.resolve(position, frame)) <= tol

    def goal_distance_mm(self, goal: GoalSpec) -> float:
        total = 0.0
        for t in goal.targets:
            obj = self.objects.get(t.obj)
            if obj is None:
                raise UnknownObject(t.obj)
            total += max(0.0, dist(obj.pose, self.resolve(t.position, t.frame)))
        return total * 1000.0

    def goal_reached(self, goal: GoalSpec) -> bool:
        return all(self.object_at(t.obj, t.position, t.frame, t.tolerance) for t in goal.targets)

    # -- actions ----------------------------------------------------------------

    def apply_pick(self, name: str) -> Status:
        obj = self.objects.get(name)
        if obj is None:
            raise UnknownObject(name)
        if obj.kind != MOVABLE or self.holding:
            return Status.FAILURE
        if any(o.supported_by == name for o in self.movables()):
            return Status.FAILURE  # something is stacked on it
        self.holding = name
        self.gripper_pos = (obj.pose[0], obj.pose[1], CARRY_Z)
        obj.pose = self.gripper_pos
        obj.supported_by = ""
        self._after_action()
        return Status.SUCCESS

    def apply_place(self, position: Vec3, frame: str) -> Status:
        origin = self.frame_origin(frame)  # may raise UnknownFrame
        if not self.holding:
            return Status.FAILURE
        obj = self.objects[self.holding]
        x, y = origin[0] + position[0], origin[1] + position[1]
        obj.pose = (x, y, SKY_Z)  # released from above; gravity decides z
        self.holding = ""
        self.gripper_pos = (x, y, CARRY_Z)
        self.settle()
        self._after_action()
        return Status.SUCCESS

    def drop_held(self) -> Status:
        if not self.holding:
            return Status.FAILURE
        return self.apply_place((self.gripper_pos[0], self.gripper_pos[1], 0.0), BASE_FRAME)

    def settle(self) -> "WorldState":
        """Rest every unheld box, bottom-up, on the highest ≥50%-overlap surface.

        A drop blocked by something it overlaps less than 50% slides sideways
        until it just touches the blocker, then falls again.
        """
        statics = [o for o in self.objects.values() if o.kind in (KITTING, TABLE)]
        falling = sorted(
            (o for o in self.movables() if o.name != self.holding),
            key=lambda o: (o.pose[2], o.name),
        )
        placed: list[SceneObject] = list(statics)
        for box in falling:
            self._rest(box, placed)
            placed.append(box)
        return self

    def _rest(self, box: SceneObject, placed: list[SceneObject]) -> None:
        for _ in range(8):
            best_top, best_name = 0.0, TABLE_NAME
            for support in placed:
                if support.kind == TABLE:
                    continue
                if _overlap_fraction(box, support) >= SUPPORT_OVERLAP - _EPS:
                    if support.top > best_top + _EPS or (
                        abs(support.top - best_top) <= _EPS and support.name < best_name
                    ):
                        best_top, best_name = support.top, support.name
            z = best_top + box.side / 2.0
            blocker = self._blocker_at(box, z, placed)
            if blocker is None:
                box.pose = (box.pose[0], box.pose[1], z)
                box.supported_by = best_name
                return
            self._nudge_off(box, blocker)
        # pathological pile-up: rest on the tallest remaining blocker
        tallest = max(
            (o for o in placed if o.kind != TABLE and _overlap_fraction(box, o) > 0.0),
            key=lambda o: (o.top, o.name),
            default=None,
        )
        top = tallest.top if tallest is not None else 0.0
        name = tallest.name if tallest is not None else TABLE_NAME
        box.pose = (box.pose[0], box.pose[1], top + box.side / 2.0)
        box.supported_by = name

    def _blocker_at(self, box: SceneObject, z: float, placed: list[SceneObject]) -> SceneObject | None:
        """Deepest horizontal intruder overlapping the box's resting volume."""
        best: SceneObject | None = None
        best_area = 0.0
        bottom = z - box.side / 2.0
        for other in placed:
            if other.kind == TABLE:
                continue
            area = _overlap_fraction(box, other)
            if area <= _EPS:
                continue
            if other.kind == KITTING:
                intrudes = bottom < other.top - _EPS
            else:
                intrudes = abs(z - other.pose[2]) < (box.side + other.side) / 2.0 - _EPS
            if intrudes and (area > best_area + _EPS or (area > best_area - _EPS and best is not None and other.name < best.name)):
                best, best_area = other, area
        return best

    def _nudge_off(self, box: SceneObject, blocker: SceneObject) -> None:
        half = box.footprint_half + blocker.footprint_half
        dx = box.pose[0] - blocker.pose[0]
        dy = box.pose[1] - blocker.pose[1]
        push_x = half - abs(dx)
        push_y = half - abs(dy)
        if push_x <= push_y:
            sx = 1.0 if dx >= 0 else -1.0
            box.pose = (blocker.pose[0] + sx * half, box.pose[1], box.pose[2])
        else:
            sy = 1.0 if dy >= 0 else -1.0
            box.pose = (box.pose[0], blocker.pose[1] + sy * half, box.pose[2])

    def _after_action(self) -> None:
        self.steps += 1
        for sub in self.subgoals:
            if sub.name in self.satisfied_subgoals:
                continue
            if all(self.object_at(t.obj, t.position, t.frame, t.tolerance) for t in sub.targets):
                self.satisfied_subgoals.add(sub.name)

    def install_subgoals(self, subgoals: tuple[Subgoal, ...]) -> None:
        self.subgoals = subgoals
        self.satisfied_subgoals = set()

    # -- snapshots ----------------------------------------------------------------

    def snapshot(self) -> dict[str, Any]:
        return {
            "objects": {
                o.name: {
                    "kind": o.kind,
                    "position": [round(v, 9) for v in o.pose],
                    "side": o.side,
                    "supported_by": o.supported_by,
                }
                for o in self.objects.values()
            },
            "gripper": {
                "holding": self.holding,
                "position": [round(v, 9) for v in self.gripper_pos],
            },
            "steps": self.steps,
        }

    def apply_positions(self, positions: dict[str, Vec3]) -> None:
        """Override object centroids (used to start demos from arbitrary states)."""
        for name, pos in positions.items():
            obj = self.objects.get(name)
            if obj is None:
                raise UnknownObject(name)
            obj.pose = (float(pos[0]), float(pos[1]), float(pos[2]))
        self.settle()


# -- scenario reset -----------------------------------------------------------


def reset(scenario: ScenarioConfig, seed: int = 0) -> WorldState:
    """Deterministic initial state for (scenario, seed)."""
    state = WorldState(scenario, seed)
    rng = random.Random(seed)
    tx, ty = scenario.table["x"], scenario.table["y"]
    state.objects[TABLE_NAME] = SceneObject(
        TABLE_NAME, TABLE, side=max(tx[1] - tx[0], ty[1] - ty[0]), pose=(0.0, 0.0, 0.0)
    )
    for spec in scenario.objects:
        if spec.kind == KITTING:
            if spec.at is None:
                raise ConfigError(f"kitting box {spec.name} needs a fixed placement")
            pose = (spec.at[0], spec.at[1], spec.floor_height)
            state.objects[spec.name] = SceneObject(
                spec.name, KITTING, side=spec.cells * spec.pitch, pose=pose,
                cells=spec.cells, pitch=spec.pitch,
            )
        elif spec.kind == MOVABLE:
            xy = _initial_xy(state, spec, rng)
            obj = SceneObject(spec.name, MOVABLE, side=spec.side, pose=(xy[0], xy[1], SKY_Z))
            state.objects[spec.name] = obj
            state.settle()
        elif spec.kind == TABLE:
            continue  # implicit table is always present
        else:
            raise ConfigError(f"unknown object kind: {spec.kind}")
    state.install_subgoals(scenario.goal.subgoals)
    return state


def _initial_xy(state: WorldState, spec: ObjectSpec, rng: random.Random) -> tuple[float, float]:
    if spec.on is not None:
        ref = state.objects.get(spec.on)
        if ref is None:
            raise ConfigError(f"{spec.name} stacks on unknown object {spec.on}")
        return (ref.pose[0], ref.pose[1])
    if spec.at is not None:
        return spec.at
    if spec.sample is None:
        raise ConfigError(f"{spec.name} has no placement")
    (xlo, xhi), (ylo, yhi) = spec.sample["x"], spec.sample["y"]
    probe = SceneObject(spec.name, MOVABLE, side=spec.side, pose=(0.0, 0.0, 0.0))
    for _ in range(200):
        x, y = rng.uniform(xlo, xhi), rng.uniform(ylo, yhi)
        probe.pose = (x, y, 0.0)
        clear = all(
            _overlap_fraction(probe, o) <= 0.0
            for o in state.objects.values()
            if o.kind in (MOVABLE, KITTING)
        )
        if clear:
            return (x, y)
    raise OverlappingInitialPlacement(f"could not place {spec.name} after 200 samples")

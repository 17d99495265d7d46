"""Behavior tree data model, tick semantics, genome serialization, validation.

Trees are built from two control node kinds (sequence, fallback) and leaf
behaviors (actions end in ``!``, conditions end in ``?``).  A tree is a value:
once built it is never mutated, so it can be shared freely across parallel
evaluation workers.  The flat genome form is a token list such as
``["s(", "pick(YellowBox)!", ")"]`` and round-trips losslessly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterator, Protocol

from .errors import EmptyGenome, UnbalancedGenome

OPEN_SEQUENCE = "s("
OPEN_FALLBACK = "f("
CLOSE = ")"


class Status(enum.Enum):
    SUCCESS = "SUCCESS"
    FAILURE = "FAILURE"
    RUNNING = "RUNNING"


class Kind(enum.Enum):
    SEQUENCE = "sequence"
    FALLBACK = "fallback"
    ACTION = "action"
    CONDITION = "condition"


CONTROL_KINDS = (Kind.SEQUENCE, Kind.FALLBACK)


def behavior_kind(token: str) -> Kind:
    """Leaf kind from the token spelling: ``?`` is a condition, else action."""
    return Kind.CONDITION if token.endswith("?") else Kind.ACTION


@dataclass
class Node:
    """One tree node; ``behavior_id`` is empty for control nodes."""

    kind: Kind
    behavior_id: str = ""
    children: list["Node"] = field(default_factory=list)

    @property
    def is_control(self) -> bool:
        return self.kind in CONTROL_KINDS

    def clone(self) -> "Node":
        return Node(self.kind, self.behavior_id, [c.clone() for c in self.children])

    def structurally_equal(self, other: "Node") -> bool:
        if self.kind is not other.kind or self.behavior_id != other.behavior_id:
            return False
        if len(self.children) != len(other.children):
            return False
        return all(a.structurally_equal(b) for a, b in zip(self.children, other.children))


def sequence(*children: Node) -> Node:
    return Node(Kind.SEQUENCE, children=list(children))


def fallback(*children: Node) -> Node:
    return Node(Kind.FALLBACK, children=list(children))


def behavior(token: str) -> Node:
    return Node(behavior_kind(token), behavior_id=token)


class ExecutionEnvironment(Protocol):
    """Resolves behavior tokens to executable effects/checks."""

    def execute(self, behavior_id: str) -> Status: ...


class CallableEnvironment:
    """Environment backed by a plain ``{behavior_id: () -> Status}`` mapping."""

    def __init__(self, behaviors: dict[str, Callable[[], Status]]):
        self._behaviors = behaviors

    def execute(self, behavior_id: str) -> Status:
        from .errors import UnknownBehavior

        try:
            fn = self._behaviors[behavior_id]
        except KeyError:
            raise UnknownBehavior(behavior_id) from None
        return fn()


class BehaviorTree:
    """Immutable wrapper around a root node."""

    def __init__(self, root: Node):
        self.root = root

    # -- construction ------------------------------------------------------

    @classmethod
    def from_tokens(cls, tokens: list[str]) -> "BehaviorTree":
        return cls(deserialize(tokens))

    @classmethod
    def from_text(cls, text: str) -> "BehaviorTree":
        return cls.from_tokens(text.split())

    # -- views -------------------------------------------------------------

    def tokens(self) -> list[str]:
        return serialize(self.root)

    def text(self) -> str:
        return " ".join(self.tokens())

    def size(self) -> int:
        return size(self.root)

    def depth(self) -> int:
        return depth(self.root)

    def subtrees(self) -> list[tuple[int, Node]]:
        return list(enumerate(preorder(self.root)))

    def validate(self) -> list["ConstraintViolation"]:
        return validate(self.root)

    def clone(self) -> "BehaviorTree":
        return BehaviorTree(self.root.clone())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, BehaviorTree) and self.root.structurally_equal(other.root)

    def __repr__(self) -> str:
        return f"BehaviorTree({self.text()!r})"


# -- serialization ----------------------------------------------------------


def serialize(node: Node) -> list[str]:
    """Flatten a tree into the open/behavior/close token list."""
    out: list[str] = []

    def walk(n: Node) -> None:
        if n.kind is Kind.SEQUENCE:
            out.append(OPEN_SEQUENCE)
            for c in n.children:
                walk(c)
            out.append(CLOSE)
        elif n.kind is Kind.FALLBACK:
            out.append(OPEN_FALLBACK)
            for c in n.children:
                walk(c)
            out.append(CLOSE)
        else:
            out.append(n.behavior_id)

    walk(node)
    return out


def deserialize(tokens: list[str]) -> Node:
    """Rebuild a tree from a token list; inverse of :func:`serialize`."""
    if not tokens:
        raise EmptyGenome("genome has no tokens")
    stack: list[Node] = []
    roots: list[Node] = []
    for tok in tokens:
        if tok in (OPEN_SEQUENCE, OPEN_FALLBACK):
            node = Node(Kind.SEQUENCE if tok == OPEN_SEQUENCE else Kind.FALLBACK)
            stack.append(node)
        elif tok == CLOSE:
            if not stack:
                raise UnbalancedGenome("close token without matching open")
            node = stack.pop()
            (stack[-1].children if stack else roots).append(node)
        else:
            node = behavior(tok)
            (stack[-1].children if stack else roots).append(node)
    if stack:
        raise UnbalancedGenome(f"{len(stack)} unclosed control token(s)")
    if len(roots) != 1:
        raise UnbalancedGenome(f"expected a single root, found {len(roots)}")
    return roots[0]


# -- metrics ----------------------------------------------------------------


def preorder(node: Node) -> Iterator[Node]:
    yield node
    for c in node.children:
        yield from preorder(c)


def size(node: Node) -> int:
    return sum(1 for _ in preorder(node))


def depth(node: Node) -> int:
    if not node.children:
        return 1
    return 1 + max(depth(c) for c in node.children)


def normalize(node: Node) -> Node:
    """Canonicalize redundant control nesting, bottom-up.

    A control node with one child is the child; a control child of the same
    kind as its parent splices its children into the parent (tick order is
    unchanged in both cases).  Keeps node counts meaningful for the length
    penalty and keeps variation operators aimed at real structure.
    """
    node.children = [normalize(c) for c in node.children]
    if node.is_control:
        flat: list[Node] = []
        for c in node.children:
            if c.kind is node.kind:
                flat.extend(c.children)
            else:
                flat.append(c)
        node.children = flat
        if len(node.children) == 1:
            return node.children[0]
    return node


# -- structural constraints --------------------------------------------------

SAME_CONTROL = "same_control_on_consecutive_levels"
CONDITION_RIGHTMOST = "condition_rightmost"
CHILDLESS_CONTROL = "childless_control"
IDENTICAL_ADJACENT = "identical_adjacent_nodes"


@dataclass(frozen=True)
class ConstraintViolation:
    constraint: str
    path: tuple[int, ...]

    def __str__(self) -> str:
        return f"{self.constraint} at {list(self.path)}"


def validate(node: Node) -> list[ConstraintViolation]:
    """Check the four structural constraints; returns one record per breach.

    Constraints: (a) a control node's child has the same control kind,
    (b) a condition is the last child of a control node, (c) a control node
    has no children, (d) two adjacent siblings are structurally identical.
    """
    violations: list[ConstraintViolation] = []

    def walk(n: Node, path: tuple[int, ...]) -> None:
        if n.is_control:
            if not n.children:
                violations.append(ConstraintViolation(CHILDLESS_CONTROL, path))
            else:
                if n.children[-1].kind is Kind.CONDITION:
                    violations.append(
                        ConstraintViolation(CONDITION_RIGHTMOST, path + (len(n.children) - 1,))
                    )
                for i, c in enumerate(n.children):
                    if c.kind is n.kind:
                        violations.append(ConstraintViolation(SAME_CONTROL, path + (i,)))
                    if i > 0 and c.structurally_equal(n.children[i - 1]):
                        violations.append(ConstraintViolation(IDENTICAL_ADJACENT, path + (i,)))
            for i, c in enumerate(n.children):
                walk(c, path + (i,))

    walk(node, ())
    return violations


# -- execution ----------------------------------------------------------------


def tick(tree: BehaviorTree | Node, env: ExecutionEnvironment,
         trace: dict[int, Status] | None = None) -> Status:
    """One root-to-leaves pass; re-evaluates everything from the root.

    ``trace`` (optional) collects the status of every visited node keyed by
    its preorder index; skipped nodes are absent.
    """
    root = tree.root if isinstance(tree, BehaviorTree) else tree
    index_of: dict[int, int] = {}
    if trace is not None:
        for i, n in enumerate(preorder(root)):
            index_of[id(n)] = i

    def visit(node: Node) -> Status:
        if node.kind is Kind.SEQUENCE:
            status = Status.SUCCESS
            for c in node.children:
                status = visit(c)
                if status is not Status.SUCCESS:
                    break
        elif node.kind is Kind.FALLBACK:
            status = Status.FAILURE
            for c in node.children:
                status = visit(c)
                if status is not Status.FAILURE:
                    break
        else:
            status = env.execute(node.behavior_id)
        if trace is not None:
            trace[index_of[id(node)]] = status
        return status

    return visit(root)


@dataclass
class EpisodeResult:
    status: Status
    ticks: int
    timed_out: bool


def run_to_completion(tree: BehaviorTree | Node, env: ExecutionEnvironment,
                      max_ticks: int = 300,
                      on_tick: Callable[[int, Status], None] | None = None) -> EpisodeResult:
    """Tick until the tree settles on Success/Failure or the budget runs out."""
    if max_ticks <= 0:
        raise ValueError("max_ticks must be positive")
    status = Status.RUNNING
    ticks = 0
    for ticks in range(1, max_ticks + 1):
        status = tick(tree, env)
        if on_tick is not None:
            on_tick(ticks, status)
        if status is not Status.RUNNING:
            return EpisodeResult(status, ticks, False)
    return EpisodeResult(status, ticks, True)

"""Shared test utilities: independent oracles and random tree generators."""

from __future__ import annotations

import random
from collections import deque

from btlearn import bt
from btlearn.bt import Kind, Node


def brute_force_violations(root: Node) -> set[tuple[str, tuple[int, ...]]]:
    """Re-derive the four structural constraints with a BFS walk.

    Kept independent of btlearn.bt.validate: explicit queue, token-based
    sibling equality.
    """
    found: set[tuple[str, tuple[int, ...]]] = set()
    queue: deque[tuple[Node, tuple[int, ...]]] = deque([(root, ())])
    while queue:
        node, path = queue.popleft()
        if node.kind in (Kind.SEQUENCE, Kind.FALLBACK):
            if len(node.children) == 0:
                found.add(("childless_control", path))
            if node.children and node.children[-1].kind is Kind.CONDITION:
                found.add(("condition_rightmost", path + (len(node.children) - 1,)))
            for i, child in enumerate(node.children):
                if child.kind is node.kind:
                    found.add(("same_control_on_consecutive_levels", path + (i,)))
                if i > 0 and bt.serialize(child) == bt.serialize(node.children[i - 1]):
                    found.add(("identical_adjacent_nodes", path + (i,)))
                queue.append((child, path + (i,)))
    return found


LEAVES = [
    "a!", "b!", "c!", "d!", "e!", "f!",
    "p?", "q?", "r?", "t?", "u?", "v?",
]


def random_tree(rng: random.Random, max_depth: int = 5, leaf_tokens: list[str] | None = None) -> Node:
    """Arbitrary tree, not necessarily constraint-respecting."""
    leaves = leaf_tokens or LEAVES
    if max_depth <= 1 or rng.random() < 0.4:
        return bt.behavior(rng.choice(leaves))
    kind = rng.choice([Kind.SEQUENCE, Kind.FALLBACK])
    n = rng.randint(0, 3)
    return Node(kind, children=[random_tree(rng, max_depth - 1, leaves) for _ in range(n)])


def random_valid_tree(rng: random.Random, max_depth: int = 5,
                      leaf_tokens: list[str] | None = None) -> Node:
    """Rejection-sample a tree passing all structural constraints."""
    while True:
        node = random_tree(rng, max_depth, leaf_tokens)
        if not bt.validate(node):
            return node

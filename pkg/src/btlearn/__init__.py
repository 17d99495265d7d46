"""Learning behavior trees for kitting tasks by evolution and demonstration."""

from .bt import (
    BehaviorTree,
    ConstraintViolation,
    EpisodeResult,
    Kind,
    Node,
    Status,
    behavior,
    deserialize,
    fallback,
    run_to_completion,
    sequence,
    serialize,
    tick,
    validate,
)
from .world import GoalSpec, GoalTarget, ScenarioConfig, Subgoal, WorldState, reset
from .pool import (
    BehaviorTemplate,
    PoolConfig,
    Registry,
    WorldEnvironment,
    generate_pool,
    run_episode,
)

__all__ = [
    "BehaviorTree",
    "BehaviorTemplate",
    "ConstraintViolation",
    "EpisodeResult",
    "GoalSpec",
    "GoalTarget",
    "Kind",
    "Node",
    "PoolConfig",
    "Registry",
    "ScenarioConfig",
    "Status",
    "Subgoal",
    "WorldEnvironment",
    "WorldState",
    "behavior",
    "deserialize",
    "fallback",
    "generate_pool",
    "reset",
    "run_episode",
    "run_to_completion",
    "sequence",
    "serialize",
    "tick",
    "validate",
]

__version__ = "0.1.0"

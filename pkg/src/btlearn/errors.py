"""Exception types shared across the package."""


class BtLearnError(Exception):
    """Base class for all package errors."""


class UnknownBehavior(BtLearnError):
    """A behavior token has no implementation in the execution environment."""

    def __init__(self, behavior_id: str):
        super().__init__(f"unknown behavior: {behavior_id!r}")
        self.behavior_id = behavior_id


class UnbalancedGenome(BtLearnError):
    """Genome token stream has mismatched open/close tokens."""


class EmptyGenome(BtLearnError):
    """Genome token stream contains no nodes."""


class UnknownObject(BtLearnError):
    """A world operation referenced an object that does not exist."""

    def __init__(self, name: str):
        super().__init__(f"unknown object: {name!r}")
        self.name = name


class UnknownFrame(BtLearnError):
    """A position was expressed in a frame that cannot be resolved."""

    def __init__(self, name: str):
        super().__init__(f"unknown frame: {name!r}")
        self.name = name


class OverlappingInitialPlacement(BtLearnError):
    """Scenario reset could not place all objects without overlap."""


class EmptyScenario(BtLearnError):
    """Gene pool generation needs at least one movable object."""


class ExhaustedRepairAttempts(BtLearnError):
    """A variation operator could not produce a constraint-valid tree."""


class InvalidBaseline(BtLearnError):
    """Baseline tree failed structural validation."""


class InvalidAction(BtLearnError):
    """A demonstrated action is not executable in the current world state."""


class InconsistentDemos(BtLearnError):
    """Demonstrations disagree in a way clustering cannot reconcile."""


class NoAchievingAction(BtLearnError):
    """Backchaining found no library action with the goal as post-condition."""

    def __init__(self, condition: str):
        super().__init__(f"no action achieves condition: {condition!r}")
        self.condition = condition


class UnknownScenario(BtLearnError):
    """Session referenced a scenario that is not registered."""


class UnknownSession(BtLearnError):
    """No session with the given id."""


class InvalidPhaseTransition(BtLearnError):
    """Session operation not allowed in the current phase."""


class ConfigError(BtLearnError):
    """Malformed configuration or data file."""

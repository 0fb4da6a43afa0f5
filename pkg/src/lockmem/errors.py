"""Exception hierarchy shared across lockmem modules."""


class LockmemError(Exception):
    """Base class for all lockmem errors."""


class InvalidComponentError(LockmemError, ValueError):
    """An action or rule names a component id outside 1..N."""


class TaskFormatError(LockmemError, ValueError):
    """A task, belief, memory or experiment document failed validation."""


class GenerationError(LockmemError, ValueError):
    """A procedural generation request cannot be satisfied."""


class BeliefInconsistencyError(LockmemError, ValueError):
    """An observation has zero likelihood under every surviving hypothesis."""


class ConfigurationError(LockmemError, ValueError):
    pass


class CapacityError(LockmemError, ValueError):
    """The exact planner was asked to search a state graph above its size cap."""


class ProtocolError(LockmemError, ValueError):
    """Experiment protocol violation, e.g. train/test overlap."""

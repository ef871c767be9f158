"""Exception types shared across the planning stack."""


class StratexError(Exception):
    """Base class for all package errors."""


class PoseOutOfBounds(StratexError):
    """Sensor origin lies outside the map volume."""


class PoseInObstacle(StratexError):
    """Requested sensor pose sits inside an occupied voxel."""


class EmptySlab(StratexError):
    """Altitude slab does not intersect the map."""


class EndpointOccupied(StratexError):
    """A path query endpoint snapped to an occupied voxel."""


class EmptyFrame(StratexError):
    """Sensor frame carries no range returns."""


class NoFrontiers(StratexError):
    """The live frontier set is empty (signals layer completion)."""


class UnknownId(StratexError):
    """A frontier id is absent from the referenced cost matrix."""


class NoViewpoints(StratexError):
    """The first frontier in the plan has no usable viewpoints."""


class Disconnected(StratexError):
    """No full-depth path exists through the viewpoint graph."""


class Unreachable(StratexError):
    """No collision-free path to the requested target."""


class DegenerateDims(StratexError):
    """World dimensions too small for the requested generator."""


class AtMaxHeight(StratexError):
    """Layer advance requested past the maximum exploration height."""


class ConfigError(StratexError):
    """Scenario configuration failed validation."""

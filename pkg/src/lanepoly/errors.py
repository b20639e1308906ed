"""Exception types shared across the package."""


class LanePolyError(Exception):
    """Base class for all package-specific errors."""


class DegenerateFit(LanePolyError):
    """Least-squares system is underdetermined (too few distinct y values)."""


class ParseError(LanePolyError):
    """A malformed annotation record.  Carries the 1-based line number."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class TooManyLanes(LanePolyError):
    """An image has more annotated lanes than the configured slot count."""


class ShapeMismatch(LanePolyError):
    """Input array shape differs from the configured model shape."""


class EmptyLane(LanePolyError):
    """A loss term received a lane with no ground-truth points."""


class DivergedLoss(LanePolyError):
    """Training loss became non-finite."""


class NoEgoLane(LanePolyError):
    """An image has no ground-truth lanes, so no ego-lane can be defined."""


class ConfigError(LanePolyError):
    """Invalid run configuration."""

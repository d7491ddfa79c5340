from __future__ import annotations


class LaneChangeError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(LaneChangeError, ValueError):
    pass


class ParseError(LaneChangeError, ValueError):
    def __init__(self, message: str, *, row: int) -> None:
        super().__init__(f"{message} (row {row})")
        self.row = row


class ParameterError(LaneChangeError, ValueError):
    pass


class LengthError(LaneChangeError, ValueError):
    pass


class ShapeError(LaneChangeError, ValueError):
    pass


class DomainError(LaneChangeError, ValueError):
    pass


class DegenerateForestError(LaneChangeError, ValueError):
    pass


class BoundsError(LaneChangeError, ValueError):
    pass


class ScenarioError(LaneChangeError, ValueError):
    pass


class VehicleLookupError(LaneChangeError, LookupError):
    pass


class NumericalError(LaneChangeError, ArithmeticError):
    def __init__(self, message: str, *, frame: int | None = None) -> None:
        if frame is not None:
            message = f"{message} at frame {frame}"

        super().__init__(message)
        self.frame = frame


class InfeasibleEnvironmentError(LaneChangeError, RuntimeError):
    def __init__(self, labels: tuple[str, ...]) -> None:
        super().__init__(
            "Ego vehicle violates half-planes: " + ", ".join(labels),
        )
        self.labels = labels


class DependencyError(LaneChangeError, FileNotFoundError):
    """A required upstream artifact does not exist."""

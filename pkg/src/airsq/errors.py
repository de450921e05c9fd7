# /src/airsq/errors.py

from typing import Any, Optional


class AirsqError(Exception):
    """Base error. `kind` is the stable, machine-readable tag the CLI reports."""

    kind = "airsq_error"

    def to_dict(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class ScenarioFormatError(AirsqError):
    kind = "scenario_format"

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvariantError(AirsqError, ValueError):
    kind = "invariant_violation"

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class EmptyDatasetError(AirsqError):
    kind = "empty_dataset"

    def __init__(self, object_type: Any):
        name = getattr(object_type, "value", object_type)
        super().__init__(f"dataset for {name} is empty")
        self.object_type = object_type


class InsufficientDataError(AirsqError):
    kind = "insufficient_data"

    def __init__(self, object_type: Any, needed: int, available: int):
        name = getattr(object_type, "value", object_type)
        super().__init__(f"{name}: need at least {needed} trajectories, found {available}")
        self.object_type = object_type
        self.needed = needed
        self.available = available


class ShapeMismatchError(AirsqError, ValueError):
    kind = "shape_mismatch"


class DivergenceError(AirsqError):
    kind = "divergence"

    def __init__(self, step: int, breakdown: Optional[Any] = None):
        super().__init__(f"non-finite loss at step {step}: {breakdown}")
        self.step = step
        self.breakdown = breakdown


class UndefinedRatioError(AirsqError):
    kind = "undefined_ratio"

    def __init__(self, report: Any, axis: str):
        super().__init__(f"sensitivity ratio for {axis} is undefined or not positive")
        self.report = report
        self.axis = axis


class ConfigError(AirsqError):
    kind = "config"

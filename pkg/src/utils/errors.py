"""Error hierarchy shared by every package; the CLI maps each class to an exit code."""
from __future__ import annotations


class CascadeError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 2


class ConfigError(CascadeError):
    exit_code = 1


class DimensionError(CascadeError):
    """Shape mismatch; names the op and the offending axis."""

    def __init__(self, op: str, axis: str, expected: object, actual: object):
        self.op = op
        self.axis = axis
        self.expected = expected
        self.actual = actual
        super().__init__(f"{op}: dimension mismatch on axis {axis!r} (expected {expected}, got {actual})")


class GeometryError(CascadeError):
    pass


class MissingGradientError(CascadeError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"parameter {name!r} has no gradient")


class GradCheckError(CascadeError):
    pass


class LabelError(CascadeError):
    pass


class DivergenceError(CascadeError):
    def __init__(self, tensor_name: str, detail: str = ""):
        self.tensor_name = tensor_name
        msg = f"training diverged: first non-finite tensor is {tensor_name!r}"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)


class CheckpointError(CascadeError):
    pass


class VerificationFailure(CascadeError):
    exit_code = 3

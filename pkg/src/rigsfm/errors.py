"""Exception hierarchy.

Two families matter to callers (and to the CLI exit codes): validation
problems with the inputs (``ValidationError``, exit 2) and numerical or
degeneracy failures during estimation (``NumericalError``, exit 3).
"""

from __future__ import annotations


class RigSfmError(Exception):
    pass


class ValidationError(RigSfmError, ValueError):
    pass


class NumericalError(RigSfmError, ArithmeticError):
    pass


class DomainError(ValidationError):
    """Argument outside the domain where a model is defined."""


class BehindCameraError(DomainError):
    pass


class ShapeError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message: str, source: str = "<input>", line: int | None = None,
                 offset: int | None = None):
        where = source
        if line is not None:
            where += f":{line}"
        if offset is not None:
            where += f" (offset {offset})"
        super().__init__(f"{where}: {message}")
        self.source = source
        self.line = line
        self.offset = offset


class NoMotionError(ValidationError):
    pass


class NoTargetError(ValidationError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class DegenerateError(NumericalError):
    pass


class VerificationFailed(NumericalError):
    pass


class InitializationError(NumericalError):
    pass


class NotPositiveDefiniteError(ValidationError):
    pass

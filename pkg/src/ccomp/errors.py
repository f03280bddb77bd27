"""Exception types shared across the package."""

from __future__ import annotations


class CcompError(Exception):
    """Base class for all package errors."""


class ScoreParseError(CcompError):
    """A score or constraint document is malformed; names the offending field."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ScoreValidationError(CcompError):
    """A structurally valid document violates a score invariant."""


class ModelMismatchError(CcompError):
    """A token, state, or score is incompatible with the model it was passed to."""


class TrainingDivergedError(CcompError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss!r}")
        self.epoch = epoch
        self.loss = loss


class UnsatisfiableConstraintError(CcompError):
    """No sequence of the requested length satisfies the constraint.

    ``position`` is the earliest 1-based position at which no feasible
    token exists, when that position is known.
    """

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class DeadEndError(CcompError):
    """A particle reached a prefix with no admissible continuation."""

    def __init__(self, position: int):
        super().__init__(f"no admissible continuation at position {position}")
        self.position = position


class ZeroWeightError(CcompError):
    """Every particle weight is zero; the constraint is unsatisfiable in practice."""

    def __init__(self, step: int):
        super().__init__(f"all particle weights are zero at step {step}")
        self.step = step


class CapExceededError(CcompError):
    """An oracle instance exceeds its hard size cap."""

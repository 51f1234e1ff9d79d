"""Exception hierarchy.

Every error the engine raises deliberately derives from DefersegError, so the
CLI can map failure classes onto its exit-code contract:

    InputError          -> exit 2 (bad files, bad values, undefined requests)
    InvariantError      -> exit 3 (an internal contract was violated)
    InfeasibleFitError  -> exit 4 (no threshold satisfies the fit constraint)
"""

from __future__ import annotations

__all__ = [
    "DefersegError",
    "InputError",
    "InvariantError",
    "UndefinedMetricError",
    "DegenerateTestError",
    "InfeasibleFitError",
]


class DefersegError(Exception):
    """Base class for all engine errors."""


class InputError(DefersegError):
    """User-supplied data or parameters are unusable (malformed file,
    out-of-range value, incompatible shapes, unknown enum member)."""


class InvariantError(DefersegError):
    """An internal consistency contract failed; indicates a bug or
    numerically impossible state, not bad user input."""


class UndefinedMetricError(InputError):
    """A requested quantity is mathematically undefined on the given data
    (single-class AUC, zero baseline error rate)."""


class DegenerateTestError(InputError):
    """A statistical test has no answer on the given data
    (zero-variance paired differences)."""


class InfeasibleFitError(DefersegError):
    """No candidate threshold satisfies the fitting constraint.

    Carries the best value that was achievable so callers can report how far
    the constraint was missed.
    """

    def __init__(self, message: str, *, best_dice: float, best_coverage: float):
        super().__init__(message)
        self.best_dice = best_dice
        self.best_coverage = best_coverage

"""Exception types raised across the localization engine."""

from __future__ import annotations


class LocalizationError(Exception):
    """Base class for all engine errors."""


class GimbalLock(LocalizationError):
    pass


class ParseError(LocalizationError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class EmptyMap(LocalizationError):
    pass


class EmptyIndex(LocalizationError):
    pass


class NonMonotonicTime(LocalizationError):
    pass


class SingularInnovationCovariance(LocalizationError):
    pass


class InsufficientFixes(LocalizationError):
    pass


class HeadingUnobservable(LocalizationError):
    pass


class NonPositiveDt(LocalizationError):
    pass


class RegionEmpty(LocalizationError):
    pass


class NoCorrespondences(LocalizationError):
    pass


class DegenerateConfiguration(LocalizationError):
    pass


class RelocalizationFailed(LocalizationError):
    """All radii up to ``r_max`` were tried without a successful registration.

    ``best`` carries the lowest-fitness attempt (or ``None`` if every attempt
    raised) so callers can inspect what went wrong.
    """

    def __init__(self, message: str, best=None, attempts: int = 0):
        super().__init__(message)
        self.best = best
        self.attempts = attempts


class ConstraintSingular(LocalizationError):
    pass


class SingularKKT(LocalizationError):
    pass


class ErrorTooLarge(LocalizationError):
    pass


class InsufficientWindow(LocalizationError):
    pass


class ExtrapolationTooFar(LocalizationError):
    pass


class NonMonotonicEvent(LocalizationError):
    pass


class NoAssociations(LocalizationError):
    pass


class ConfigError(LocalizationError):
    pass

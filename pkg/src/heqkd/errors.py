"""Exception and warning types raised across the package."""
from __future__ import annotations


class NoRootError(ValueError):
    """Observed counts admit no source parameters inside the physical bounds."""


class AmbiguousRootError(ValueError):
    """More than one parameter set reproduces the observed counts."""

    def __init__(self, message: str, roots: list[tuple[float, float, float]]):
        super().__init__(message)
        self.roots = roots


class DegenerateRateError(ArithmeticError):
    """Coincidence probability is too small to define an error rate."""


class ZeroBlockError(ValueError):
    """A crosstalk block carries zero total probability."""


class UnusedPairError(ValueError):
    """The requested basis pair is discarded during sifting."""


class ZeroIntensityError(ZeroDivisionError):
    """Both stabilization detectors read zero."""


class ActuatorSaturated(RuntimeWarning):
    """The phase actuator hit its travel limit; the loop keeps running railed."""


class ConfigError(ValueError):
    """Invalid run configuration. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip() if where else message)

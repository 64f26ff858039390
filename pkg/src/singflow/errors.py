"""Exception hierarchy shared by all singflow modules."""
from __future__ import annotations


class SingflowError(Exception):
    """Base class for every error raised by the library."""


class DomainError(SingflowError, ValueError):
    """A point lies outside the working ball of the field."""


class DegenerateSingularityError(SingflowError):
    """A declared singularity has a (numerically) singular Jacobian."""


class EscapeError(SingflowError):
    """The orbit left the working ball before the requested time."""

    def __init__(self, message: str, exit_time: float):
        super().__init__(message)
        self.exit_time = exit_time


class StiffnessError(SingflowError):
    """Step size underflow or step budget exhausted."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class NearSingularityError(SingflowError):
    """The orbit came within the singular threshold; use :mod:`singflow.blowup`."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class NoCrossingError(SingflowError):
    """No transverse crossing of the target section in the search window."""


class AmbiguousCrossingError(SingflowError):
    """Several crossings of the target section were found in the search window."""

    def __init__(self, message: str, times):
        super().__init__(message)
        self.times = list(times)


class TubeEscapeError(SingflowError):
    """The transported normal vector left the admissible tube."""

    def __init__(self, message: str, escape_time: float):
        super().__init__(message)
        self.escape_time = escape_time


class NeedsDirectionError(SingflowError):
    """A singular point was passed to the blowup without a direction tag."""


class RootFindError(SingflowError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class IdentificationDomainError(SingflowError):
    """No landing on the target section within the identification window."""


class NoReturnError(SingflowError):
    """The orbit does not come back near its starting point within the horizon."""


class NoContractionError(SingflowError):
    """Iterates of the return map left the ball instead of converging."""

    def __init__(self, message: str, iterates):
        super().__init__(message)
        self.iterates = list(iterates)


class RefineError(SingflowError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual

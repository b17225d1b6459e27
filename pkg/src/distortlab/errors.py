"""Exception hierarchy shared by all distortlab modules."""


class DistortLabError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(DistortLabError, ValueError):
    """A numeric parameter is outside its admissible range."""


class InvalidDomainError(DistortLabError):
    """Polygon is degenerate, self-intersecting or wrongly oriented."""


class BranchError(DistortLabError):
    """Square-root branch tracking jumped along a boundary."""


class SolverError(DistortLabError):
    """An iterative solver failed to reach its tolerance.

    ``history`` carries the residual (or duality gap) trace.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ReanchorError(SolverError):
    """Target boundary is not star-shaped about any tried anchor."""


class DomainError(DistortLabError):
    """A map was evaluated outside its declared domain."""


class CompositionDomainError(DomainError):
    """Image of the inner map escapes the domain of the outer map."""


class PrecisionError(DistortLabError):
    """Distances fell below what double precision can resolve."""


class ResolutionError(DistortLabError):
    """Geometry collapsed below the grid or sampling resolution."""


class DegenerateFamilyError(DistortLabError):
    """Path family endpoints overlap, so its modulus is infinite."""


class ConfigError(DistortLabError):
    """Experiment configuration failed validation.

    ``violations`` lists one message per offending field.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))

"""Exception types shared across the package."""


class RigFusionError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(RigFusionError, ValueError):
    """An input violates a documented precondition (non-finite, wrong shape, ...)."""


class StaleStateError(RigFusionError):
    """Propagation was requested over a longer gap than the motion model is trusted for."""


class RegistrationError(RigFusionError):
    """Base class for scan registration failures."""


class InsufficientPointsError(RegistrationError):
    """Scan has too few usable points / correspondences to solve a pose."""


class DegenerateGeometryError(RegistrationError):
    """Scan content does not constrain all six degrees of freedom."""


class InsufficientOverlapError(RegistrationError):
    """Two maps do not overlap enough to be aligned."""


class NumericalFailureError(RigFusionError):
    """A linear solve that must succeed did not (singular innovation, ...)."""


class ConfigError(RigFusionError):
    """Scenario configuration is malformed or inconsistent."""


class MapAlignTimeoutError(RigFusionError):
    """Bootstrap map alignment never reached sufficient overlap."""

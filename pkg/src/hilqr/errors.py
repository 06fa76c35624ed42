"""Exception hierarchy.

The CLI maps these onto its exit-code contract: config errors exit 2,
simulation errors exit 3, solver errors exit 4, verification failures exit 5.
"""


class HilqrError(Exception):
    """Base class for all package errors."""


class ConfigError(HilqrError):
    """Malformed or inconsistent configuration input."""


class SimulationError(HilqrError):
    """Event-driven simulation failed."""


class IntegrationError(SimulationError):
    """Adaptive integrator could not meet its tolerances."""


class DomainError(SimulationError):
    """State violates the claimed mode's domain (some outgoing guard < 0)."""


class ZenoError(SimulationError):
    """More than one hybrid event inside a single control timestep."""


class TransversalityError(SimulationError):
    """Grazing event: |D_t g + D_x g . F_I| below the transversality tolerance."""


class EventLocationError(SimulationError):
    """Guard root finding failed to bracket or converge."""


class ExtensionCoverageError(SimulationError):
    """Mode mismatch at a knot not covered by any reference extension."""


class SolverError(HilqrError):
    """Trajectory optimization failed."""


class BackwardPassError(SolverError):
    """Q_uu not positive definite at the regularization ceiling."""


class ForwardPassError(SolverError):
    """Every line-search candidate failed to roll out."""


class VerificationError(HilqrError):
    """A numerical verification check failed."""

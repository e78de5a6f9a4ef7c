"""Exception hierarchy for the scatdeg package."""


class ScatDegError(Exception):
    """Base class for all scatdeg errors."""


class ConfigError(ScatDegError):
    """Invalid configuration (bad JSON, unknown fields, out-of-range values)."""


class EvaluationAtSingularity(ScatDegError):
    """Potential evaluated exactly at a singular center."""


class NoVirialRadius(ScatDegError):
    """No virial radius found below the configured ceiling."""


class ResolutionTooCoarse(ScatDegError):
    """Hill contour polylines failed to close at the given grid resolution."""


class StepSizeUnderflow(ScatDegError):
    """Integrator step collapsed (typically a non-regularizable near-collision)."""


class EnergyDriftExceeded(ScatDegError):
    """Energy drift along a trajectory exceeded tolerance after retries."""


class NotRegularizable(ScatDegError):
    """Singular exponent is not of the form 2n/(n+1)."""


class NoPericentre(ScatDegError):
    """Trajectory or effective potential has no radial minimum."""


class LaunchInsideInteractionZone(ScatDegError):
    """Launch point lies inside the virial ball."""


class RefinementBudgetExceeded(ScatDegError):
    """Adaptive refinement ran out of budget; partial data may be attached."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DiscontinuityDetected(ScatDegError):
    """Unclosable angular gap in the final-direction map (trapping or a
    non-regularizable collision on the sweep)."""


class MeshTooCoarse(ScatDegError):
    """Sphere-degree image triangles stay too large within the refinement budget."""


class RootBudgetExceeded(ScatDegError):
    """Too many preimage candidates in the Lagrange-projection root sweep."""


class SingularJacobian(ScatDegError):
    """Target point is not a regular value (near-singular Jacobian at a root)."""


class BracketNotFound(ScatDegError):
    """Initial sweep found no bracket realizing the itinerary prefix."""

    def __init__(self, message, sweep=None):
        super().__init__(message)
        self.sweep = sweep


class PrecisionExhausted(ScatDegError):
    """Bisection bracket collapsed below width tolerance without a witness."""

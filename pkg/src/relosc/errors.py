"""Exception taxonomy shared across the package."""


class ReloscError(Exception):
    """Base class for all package errors."""


class ConfigError(ReloscError):
    """Malformed experiment configuration."""


class IoError(ReloscError):
    """Unwritable output target or failed artifact write."""


class NonIntegrableCoefficient(ReloscError):
    """p or r failed positivity, or a coefficient blew up inside the range."""


class StepUnderflow(ReloscError):
    """Adaptive step size collapsed below the resolution floor."""


class NonPositiveSolution(ReloscError):
    """A solution required to be positive vanished or changed sign."""


class QuadratureFailure(ReloscError):
    """An appended quadrature component failed its error control."""


class IntervalMismatch(ReloscError):
    """Two coefficient sets do not share the same interval."""


class WeightMismatch(ReloscError):
    """Two coefficient sets carry different weights r."""


class DegenerateState(ReloscError):
    """(u, pu') shorter than the vanish tolerance; no Pruefer angle exists."""


class RangeMismatch(ReloscError):
    """Evaluation requested outside the common range of two trajectories."""


class BasisNotNormalized(ReloscError):
    """W(u0, v0) deviates from 1 beyond tolerance."""


class PoleInWindow(ReloscError):
    """tan(psi) has a pole inside the requested Riccati window."""


class SignChangeInBeta1(ReloscError):
    """Kepler shear coefficient beta1 changes sign on the range."""


class DomainBelowThreshold(ReloscError):
    """x at or below the positivity threshold e_n of the iterated-log scale."""


class MinimalityViolated(ReloscError):
    """u0 is not the minimal (principal) solution near the right endpoint."""


class HypothesisViolated(ReloscError):
    """A structural hypothesis of a criterion fails on the given data."""


class NotIntegrable(ReloscError):
    """Tail integral required by a criterion does not converge."""


class NotAdmissible(ReloscError):
    """Edge data fails the admissibility requirements (e.g. beta changes sign)."""


class NoBracket(ReloscError):
    """Root search found no sign change in the supplied range."""


class DegenerateBasePoint(ReloscError):
    """s(z, ell) vanishes at the base point; Floquet data undefined there."""


class WindowTooWide(ReloscError):
    """Spectral window contains more eigenvalues than the configured cap."""

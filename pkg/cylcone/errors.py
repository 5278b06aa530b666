"""Exceptions raised by cylcone computations."""


class CylconeError(Exception):
    """Base for all cylcone errors."""


class CertificateFailure(CylconeError):
    """A numerical certificate could not be established.

    The CLI maps these to exit code 2.
    """


class ConfigError(CylconeError):
    """Run configuration failed validation; message carries field paths."""


# Cone spectra
class InvalidDimension(CylconeError):
    """A sphere dimension below 1."""


class UnstableCone(CylconeError):
    """Indicial roots are complex; the cone is not strictly stable."""


class GapUnattainable(CertificateFailure):
    """No lambda candidate reaches the required gap."""

    def __init__(self, message: str, best_gap: float):
        super().__init__(message)
        self.best_gap = best_gap


# Foliation
class BlowUp(CylconeError):
    """Leaf profile left the (u, v) quadrant."""


class NoConvergence(CylconeError):
    """A shooting, root or fit step did not settle."""


class OutOfTable(CylconeError):
    """Point lies outside the angular range resolved by the polar table."""


class NoBarrier(CertificateFailure):
    """No barrier of the requested kind has a certified sign."""


# Jacobi fields
class DegenerateRecurrence(CylconeError):
    """Coefficient recurrence hit a zero pivot."""


class DivergentNorm(CylconeError):
    """A weighted norm integral does not converge at the origin."""


class HypothesisFail(CylconeError):
    """Field does not meet the three-annulus hypotheses."""


# Gluing
class BadBeta(CylconeError):
    """beta outside the admissible interval."""


class RegionOverflow(CylconeError):
    """Construction left the region it was built for."""


class NewtonDiverged(CylconeError):
    """Newton residual failed to decrease."""


class SingularJacobian(CylconeError):
    """Banded Jacobian could not be factored."""


class NotGraphical(CylconeError):
    """Surface is not a normal graph over the reference slice."""


class DegenerateStencil(CylconeError):
    """Axis node where the one-sided curvature stencil has no valid limit."""


# Continuation diagnostics
class ResolutionExceeded(CylconeError):
    """Too few samples to resolve the requested scale."""


class NegativityFail(CertificateFailure):
    """Barrier mean curvature is not negative at some tested node."""


class SandwichFail(CertificateFailure):
    """Barrier slice leaves the band between neighbouring leaves."""


class MassBoundFail(CertificateFailure):
    """Mass ratio exceeds the allowed bound."""


class ReportFailed(CertificateFailure):
    """A command finished but its report did not meet the pass criterion."""


class NoSignal(CylconeError):
    """Distance to the cone vanishes; nothing to normalize."""

"""Exception types shared across the package.

Every certificate failure has its own type so callers (and the CLI) can name
the first thing that broke instead of sifting through tracebacks.
"""


class CertificateError(Exception):
    """Base for every certificate failure in the package."""


class MetricViolation(CertificateError):
    """Distances fail positivity/symmetry sanity checks."""


class ConstructionFailed(CertificateError):
    """A dyadic system could not be certified (partition/nesting/sandwich)."""


class CoverageFailed(CertificateError):
    """No family of <= m_max shifted systems covers every ball at the target gamma."""

    def __init__(self, m_max, gamma_target, gamma_achieved):
        self.m_max = m_max
        self.gamma_target = gamma_target
        self.gamma_achieved = gamma_achieved
        super().__init__(
            f"{m_max} systems reach gamma={gamma_achieved:.6g} > target {gamma_target:.6g}"
        )


class NotSPD(CertificateError):
    """A matrix expected to be symmetric positive definite is not."""


class EllipsoidNotConverged(CertificateError):
    """The ellipsoid iteration failed to reach its tolerance."""


class InfeasibleRepresentation(CertificateError):
    """kernel_representation hit a point whose value cannot be reproduced."""

    def __init__(self, x, detail=""):
        self.x = x
        super().__init__(f"no admissible representer at point {x} {detail}".rstrip())


class BoundViolated(CertificateError):
    """A displayed kernel bound failed at a concrete pair."""

    def __init__(self, x, y, ratio):
        self.x = x
        self.y = y
        self.ratio = ratio
        super().__init__(f"kernel bound violated at ({x},{y}): ratio {ratio:.6g}")


class MembershipFailed(CertificateError):
    """A residual left kappa times the convex body (diagnostic; engine bug or bad cfg)."""

    def __init__(self, cube, point, detail=""):
        self.cube = cube
        self.point = point
        super().__init__(f"membership failed on cube {cube} at point {point} {detail}".rstrip())


class HypothesisFailed(CertificateError):
    """A route's hypothesis (kernel regularity / testing condition) measurably broke."""

    def __init__(self, which, value, cap):
        self.which = which
        self.value = value
        self.cap = cap
        super().__init__(f"hypothesis '{which}' broke: measured {value:.6g} exceeds cap {cap:.6g}")

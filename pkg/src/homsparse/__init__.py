"""Certified dyadic analysis on finite doubling spaces.

Layers, bottom to top:

* ``space``         finite quasi-metric measure spaces, exact geometric constants
* ``dyadic``        dyadic systems, adjacent families, sparse/Carleson certificates
* ``matrix_weight`` matrix Muckenhoupt characteristics and reducing matrices
* ``convex_body``   convex-body averages, John ellipsoids, kernel representers
* ``operators``     Haar systems/multipliers, maximal functions, kernel tests
* ``sparse_engine`` the certified convex-body sparse decomposition
* ``harness``       inequality verification, instance generators, reports
"""

from . import convex_body, dyadic, harness, matrix_weight, operators, space, sparse_engine
from .errors import (
    BoundViolated,
    CertificateError,
    ConstructionFailed,
    CoverageFailed,
    EllipsoidNotConverged,
    HypothesisFailed,
    InfeasibleRepresentation,
    MembershipFailed,
    MetricViolation,
    NotSPD,
)

__all__ = [
    "space", "dyadic", "matrix_weight", "convex_body", "operators",
    "sparse_engine", "harness",
    "CertificateError", "MetricViolation", "ConstructionFailed", "CoverageFailed", "NotSPD",
    "EllipsoidNotConverged", "InfeasibleRepresentation", "BoundViolated",
    "MembershipFailed", "HypothesisFailed",
]

__version__ = "0.1.0"

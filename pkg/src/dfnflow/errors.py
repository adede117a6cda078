"""Exception and warning types shared across the package."""


class DfnError(Exception):
    """Base class for all dfnflow errors."""


class OverlapError(DfnError):
    """Two fractures overlap on a set of positive area, or three or more
    fractures meet along one line with overlapping extents."""


class DegenerateFracture(DfnError):
    """Fracture polygon is non-convex, non-planar, or has near-zero area."""


class OffPlane(DfnError):
    """Point handed to a fracture-local mapping does not lie on the plane."""


class OffFracture(DfnError):
    """Sampling line leaves the fracture it was pinned to."""


class GeometryMismatch(DfnError):
    """An analytic case failed its internal consistency check."""


class NoBoundaryContact(DfnError):
    """A requested boundary portion does not touch the fracture boundary."""


class ParseError(DfnError):
    """Malformed input file (network JSON or mesh)."""


class UnsupportedVersion(DfnError):
    """Input file declares a format version this build does not read."""


class MeshFailure(DfnError):
    """Mesh generator could not satisfy its quality or conformity targets."""


class EmptyTraceMesh(MeshFailure):
    """A trace received no edges on one of its sides during meshing."""


class NonPositiveError(DfnError):
    """Log-log slope fitting needs strictly positive errors and sizes."""


class NotConverged(DfnError):
    """Iterative solver exhausted its iteration budget."""

    def __init__(self, msg, iterations=None, residual=None):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual


class NotSpd(DfnError):
    """Matrix handed to the SPD solver shows negative curvature."""


class SingularSchur(DfnError):
    """Saddle-point system has a singular Schur complement."""


class ZeroDistance(DfnError):
    """Cell center falls on an edge, breaking a two-point flux distance."""


class SingularLocal(DfnError):
    """Local interaction-region system is singular."""


class NonSpdLocal(DfnError):
    """Element matrix lost positive definiteness."""


class FloatingFracture(DfnError):
    """Fracture has neither Dirichlet data nor a trace connection, so its
    head is determined only up to a constant."""


class SliverPolygon(UserWarning):
    """A cut produced a sub-polygon of negligible area that was merged away."""


class QuasiUniformityWarning(UserWarning):
    """Adjacent mortar-side edges differ in length by a large factor."""

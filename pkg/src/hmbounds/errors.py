"""Exception hierarchy shared by all modules."""


class HMBoundsError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(HMBoundsError, ValueError):
    """A surface or scenario parameter lies outside its validity range."""


class ConstructionError(HMBoundsError):
    """A builder produced a degenerate or inconsistent triangulation."""


class TopologyError(HMBoundsError):
    """The mesh is non-manifold or non-orientable."""


class AssemblyError(HMBoundsError):
    """Finite-element assembly failed (e.g. a zero-area triangle)."""


class EigenSolverError(HMBoundsError):
    """The eigensolver did not converge; ``residuals`` holds the best ones seen."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class DomainError(HMBoundsError, ValueError):
    """An input lies outside the domain of the operation."""


class RankError(HMBoundsError):
    """A trial family is rank deficient; ``member`` is the offending index."""

    def __init__(self, message, member=None):
        super().__init__(message)
        self.member = member


class ShapeError(HMBoundsError, ValueError):
    """Array shapes of two inputs do not match."""


class GeometryError(HMBoundsError):
    """Vertices are not on the locus an operation requires."""


class MissingDensityError(HMBoundsError):
    """A conformal density is required but the mesh carries none."""


class NonBalanceableError(HMBoundsError):
    """No Moebius map balances the given measure within the iteration cap."""


class DegenerateTensorError(HMBoundsError):
    """The generalized mean curvature H_T vanishes identically."""

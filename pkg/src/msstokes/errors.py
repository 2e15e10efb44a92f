"""Exception types shared across the package."""


class MsStokesError(Exception):
    """Base class for all package errors."""


class ConfigError(MsStokesError):
    """Invalid run configuration; message names the offending field."""


class CircleTooSmall(MsStokesError):
    """A perforation encloses no triangle centroid and cuts no edge."""


class SnapDegeneracy(MsStokesError):
    """Node snapping produced a (nearly) degenerate triangle."""


class ParseError(MsStokesError):
    """Mesh file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvariantViolation(MsStokesError):
    """A mesh or partition invariant failed; message names the check."""


class DegenerateElement(MsStokesError):
    """Triangle with non-positive area passed to an element kernel."""


class SingularSystem(MsStokesError):
    """Linear system is singular or solved with unacceptable residual."""


class NotPositiveDefinite(MsStokesError):
    """Matrix required to be positive definite is not (to tolerance)."""


class EmptyAfterPOD(MsStokesError):
    """Orthonormalization removed every snapshot column."""


class DimensionMismatch(MsStokesError):
    """Coefficient vector length does not match the space dimension."""


class MeshMismatch(MsStokesError):
    """Two solutions do not live on the same mesh/partition."""


class MissingPrerequisite(MsStokesError):
    """A pipeline stage was requested before its prerequisites ran."""


class EdgeRankWarning(UserWarning):
    """Per-block edge-mean matrix of the offline basis is rank deficient."""

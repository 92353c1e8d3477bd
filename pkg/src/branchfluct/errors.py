"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: input/structure problems -> 2,
numerical non-convergence -> 3, statistical test failures -> 1.
"""


class BranchfluctError(Exception):
    """Base class for all package errors."""


class ModelStructureError(BranchfluctError):
    """Structural problem in a model definition (dimension mismatch, bad field).

    Carries ``field_path`` pointing at the offending field, e.g. ``offspring[1][0].children``.
    """

    def __init__(self, field_path, message):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class ModelFileError(BranchfluctError):
    """Unparseable or invalid model spec file."""

    def __init__(self, message, field_path=None, line=None):
        self.field_path = field_path
        self.line = line
        loc = ""
        if field_path is not None:
            loc += f" at {field_path}"
        if line is not None:
            loc += f" (line {line})"
        super().__init__(message + loc)


class DomainError(BranchfluctError):
    """Argument outside the mathematical domain of an operation (e.g. t < 0)."""


class EigenStructureRejection(BranchfluctError):
    """A declared eigen-structure failed validation.

    ``index`` identifies the offending (i, j, k) triple (1-based) when applicable.
    """

    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"{message} [triple (i,j,k)={index}]"
        super().__init__(message)


class JordanDeclarationRequired(BranchfluctError):
    """Numeric eigensolve found clustered eigenvalues; an explicit chain
    declaration is required ("Jordan structure required")."""


class NotSupercriticalError(BranchfluctError):
    """Leading eigenvalue is not strictly positive."""


class UnsupportedOrderError(BranchfluctError):
    """Requested moment order above the supported maximum (4)."""


class QuadratureError(BranchfluctError):
    """Quadrature failed to converge; carries the last two refinement iterates."""

    def __init__(self, message, last_two=None):
        self.last_two = last_two
        super().__init__(message)


class OdeIntegrationError(BranchfluctError):
    """Adaptive ODE integrator hit its step-size floor or failed."""


class KernelPreconditionError(BranchfluctError):
    """Functional violates a kernel precondition (e.g. not in the required
    annihilator subspace); names the offending dual index."""

    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"{message} [dual index (i,j,k)={index}]"
        super().__init__(message)


class RegimePreconditionError(BranchfluctError):
    """Operation called in the wrong spectral regime; carries the RegimeReport."""

    def __init__(self, message, report=None):
        self.report = report
        if report is not None:
            message = f"{message} [regime: {report}]"
        super().__init__(message)


class CriticalClassificationError(BranchfluctError):
    """Functional has zero projection in every critical eigenspace, or a
    nonzero projection in two or more of them."""

    def __init__(self, message, projections=None):
        self.projections = projections
        super().__init__(message)


class ObservationGridError(BranchfluctError):
    """A required observation time is missing from a trajectory; interpolation
    is refused by design."""


class DegenerateCovarianceError(BranchfluctError):
    """Covariance matrix is numerically degenerate."""

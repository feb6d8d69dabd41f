"""Exception taxonomy shared across the package."""


class BubbleBemError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BubbleBemError):
    """Invalid construction parameters (bad refinement level, nonpositive axis, ...)."""


class UsageError(BubbleBemError):
    """API misuse: mismatched meshes, wrong operand kinds, out-of-range orders."""


class NearSingularEvaluationError(BubbleBemError):
    """Field evaluation requested too close to a surface for the panel quadrature."""


class NearResonanceError(BubbleBemError):
    """A solve hit a (near-)singular characteristic operator.

    Carries the offending scalar so the resonance finder can exploit it.
    """

    def __init__(self, message, schur_scalar=None, condition=None):
        super().__init__(message)
        self.schur_scalar = schur_scalar
        self.condition = condition


class NumericalFailure(BubbleBemError):
    """A dense linear-algebra step failed (singular matrix, no convergence)."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class DiagnosticFailure(BubbleBemError):
    """An iterative search did not converge; diagnostics attached."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class MultiplicityAnomalyError(BubbleBemError):
    """Root counting found a number of characteristic minima other than two."""

    def __init__(self, message, count=None, landscape=None):
        super().__init__(message)
        self.count = count
        self.landscape = landscape


class UnsupportedGeometryError(BubbleBemError):
    """Operation requires a geometry (e.g. a sphere) the input does not provide."""

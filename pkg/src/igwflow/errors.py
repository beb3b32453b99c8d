"""Exception hierarchy. The CLI maps these onto stable exit codes."""


class IGWError(Exception):
    """Base class for library errors."""


class ParseError(IGWError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CouplingError(IGWError, ValueError):
    """A plan does not couple the given clouds."""


class UnsupportedMarginalsError(IGWError, ValueError):
    """The solver needs equal-size clouds with uniform weights."""


class SizeGuardError(IGWError, ValueError):
    """Problem too large for an exhaustive or dense routine."""


class SingularityError(IGWError, ArithmeticError):
    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class MapDoesNotExistError(SingularityError):
    """The optimal dual matrix is singular, so no Gromov-Monge map is available."""


class FlowDegenerateError(SingularityError):
    """Covariance fell below the singularity floor during a flow."""


class NonFiniteError(IGWError, FloatingPointError):
    def __init__(self, message, state=None, epoch=None):
        super().__init__(message)
        self.state = state
        self.epoch = epoch


class InnerSolverDivergence(IGWError, RuntimeError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate

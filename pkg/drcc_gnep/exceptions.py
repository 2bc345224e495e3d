"""
Exception hierarchy shared by every app of the project.

Management commands translate these into CommandError exit codes; library
callers can catch GnepError to handle all of them at once.
"""


class GnepError(Exception):
    """Base class for all solver errors"""


class DimensionError(GnepError, ValueError):
    """Array shapes do not match the problem layout"""


class ProblemValidationError(GnepError, ValueError):
    """Problem data violates a structural requirement"""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ProblemFormatError(GnepError):
    """A problem, sample or point file could not be parsed"""

    def __init__(self, message, path=None, line=None, field=None):
        self.path = path
        self.line = line
        self.field = field
        location = []
        if path:
            location.append(str(path))
        if line is not None:
            location.append(f'line {line}')
        if field:
            location.append(f'field {field}')
        prefix = f"{', '.join(location)}: " if location else ''
        super().__init__(f'{prefix}{message}')


class SystemTooLargeError(GnepError):
    """The requested construction or enumeration exceeds its size guard"""


class QPInfeasibleError(GnepError):
    """
    Raised when a quadratic subproblem has no feasible point.

    certificate holds nonnegative row weights y with y^T G = 0 and
    y^T h < 0 when a Farkas proof was found; max_violation is the smallest
    uniform relaxation that makes the rows feasible.
    """

    def __init__(self, message, certificate=None, max_violation=None, agent=None):
        super().__init__(message)
        self.certificate = certificate
        self.max_violation = max_violation
        self.agent = agent


class NotPositiveDefiniteError(GnepError, ValueError):
    """Curvature matrix is not symmetric positive definite"""


class InfeasibleGameError(GnepError):
    """No binary node of the reformulated game admits a feasible point"""


class NotApplicableError(GnepError):
    """The closed-form equilibrium oracle does not apply to these parameters"""


class UnsupportedDistributionError(GnepError, ValueError):
    """Sampler names a distribution that is not implemented"""

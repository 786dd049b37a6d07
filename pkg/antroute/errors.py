class AntRouteError(Exception):
    """ Base class for every error raised by antroute. """

    exit_code = 3


class ParameterError(AntRouteError, ValueError):
    """ A generator, configuration or operation parameter is out of range. """

    exit_code = 1


class DomainError(AntRouteError, ValueError):
    """ A closed-form path length formula was evaluated outside its domain. """

    exit_code = 1


class ValidationError(AntRouteError, ValueError):
    """ A topology or table dump violates a structural invariant. """

    exit_code = 2


class TopologySyntaxError(ValidationError):
    """ A topology file could not be parsed.

    Parameters
    ----------
    message : str
        Description of the problem.
    lineno : int
        One-based line number of the offending line.
    """

    def __init__(self, message, lineno):
        super().__init__('line %d: %s' % (lineno, message))
        self.lineno = lineno


class ConsistencyError(AntRouteError, RuntimeError):
    """ Internal bookkeeping went wrong (signals a bug, not bad input). """

    exit_code = 3


class FitError(AntRouteError, RuntimeError):
    """ The path length fit failed to converge.

    Parameters
    ----------
    message : str
        Description of the failure.
    diagnostics : dict
        Optimizer output kept for inspection.
    """

    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

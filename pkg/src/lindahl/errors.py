"""Exception hierarchy shared by the solvers, parsers and the CLI."""


class LindahlError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 5


class InstanceError(LindahlError, ValueError):
    """An instance (or an input allocation) is malformed."""

    exit_code = 2


class ParseError(InstanceError):
    """A Pabulib or JSON file could not be parsed.

    ``line`` is the 1-based line number of the offending row when known.
    """

    exit_code = 2

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InfeasibleError(LindahlError):
    """The instance or an LP has no feasible point."""

    exit_code = 3


class UnboundedError(LindahlError):
    """An LP is unbounded in the direction of optimisation."""

    exit_code = 3


class ConvergenceError(LindahlError):
    """An iterative method stopped before reaching its tolerance."""

    exit_code = 4

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class ZeroUtilityError(LindahlError, ValueError):
    """Some agent gets zero utility, so the dynamics or price formula is undefined."""

    exit_code = 3

    def __init__(self, agent):
        self.agent = agent
        super().__init__(f"agent {agent} has zero utility at the current allocation")

"""Exception hierarchy shared by the library and the command line.

The CLI maps each family to a fixed exit code: input problems exit with 2,
infeasible requests with 3 and numerical failures with 4.
"""


class PMLError(Exception):
    """Base class for all errors raised by pmlkit."""

    exit_code = 1


class InputError(PMLError, ValueError):
    """Malformed input: bad files, shapes, or out-of-domain arguments."""

    exit_code = 2


class InfeasibleError(PMLError):
    """The requested guarantee or design problem has no solution."""

    exit_code = 3


class InsufficientSamplesError(InfeasibleError):
    """The uncertainty radius is too large for the requested guarantee."""


class NumericalError(PMLError, ArithmeticError):
    """A numerical routine failed to converge or lost too much precision."""

    exit_code = 4

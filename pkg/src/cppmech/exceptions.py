"""Exception hierarchy shared by every module.

Each class maps onto one CLI exit code so that callers can tell bad input
apart from a problem that is simply too large or numerically degenerate.
"""


class CPPError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class InputError(CPPError, ValueError):
    """Malformed or out-of-contract input (indices, marginals, schema)."""

    exit_code = 2


class CapacityError(CPPError):
    """Exact enumeration requested above the configured size cap."""

    exit_code = 3


class NumericalError(CPPError, ArithmeticError):
    """Non-finite values, stalled refinement or an uncertifiable estimate."""

    exit_code = 4


class ContractError(CPPError):
    """A precondition the caller is responsible for does not hold."""

    exit_code = 4

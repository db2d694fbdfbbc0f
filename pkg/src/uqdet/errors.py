"""Exception hierarchy shared by the library and the command-line tool.

Each error class carries the process exit code the CLI uses when the
exception escapes a command.
"""


class UqdetError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(UqdetError):
    """Invalid input data, file contents, or configuration."""

    exit_code = 2


class NumericalError(UqdetError):
    """A computation produced NaN/Inf or otherwise failed numerically."""

    exit_code = 3


class ContractError(UqdetError):
    """An internal interface contract was violated (a bug, not bad input)."""

    exit_code = 4

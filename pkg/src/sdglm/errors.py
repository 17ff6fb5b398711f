"""Exception hierarchy shared by the library and the command line."""


class SdglmError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class InputError(SdglmError, ValueError):
    """Arguments with the wrong shape, range or type."""

    exit_code = 2


class ConfigError(InputError):
    """Invalid configuration; carries every problem found."""

    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(SdglmError, ValueError):
    """Malformed data file or values."""

    exit_code = 3


class NumericError(SdglmError, ArithmeticError):
    """NaN/Inf produced during a computation."""

    exit_code = 4


class DegenerateVarianceError(NumericError):
    pass


class ConsistencyError(NumericError):
    """An internal certificate failed; indicates a solver defect."""

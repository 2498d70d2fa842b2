"""
Exception hierarchy.

Every error raised on purpose by the library derives from `GplfmError` and carries the exit code
the command line returns for it: 1 usage, 2 data, 3 numerical failure.
"""


class GplfmError(Exception):
    exit_code = 1


class UsageError(GplfmError):
    exit_code = 1


class InvalidParameterError(GplfmError, ValueError):
    exit_code = 1


class DataError(GplfmError, ValueError):
    exit_code = 2


class NumericalError(GplfmError, ArithmeticError):
    exit_code = 3


class FilterDivergenceError(NumericalError):
    def __init__(self, message: str, step: int | None = None) -> None:
        super().__init__(message)
        self.step = step


class ConvergenceError(NumericalError):
    def __init__(self, message: str, step: int | None = None) -> None:
        super().__init__(message)
        self.step = step


class NonStationaryError(NumericalError):
    pass


class SamplerStallError(NumericalError):
    pass


class RankDeficientDesignError(NumericalError):
    pass


class DegenerateInputError(NumericalError):
    pass

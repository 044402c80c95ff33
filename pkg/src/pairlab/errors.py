"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class PairlabError(Exception):
    exit_code = 1


class ParameterError(PairlabError, ValueError):
    """A physical parameter lies outside its domain."""

    exit_code = 3


class ConfigError(PairlabError, ValueError):
    exit_code = 2

    def __init__(self, message, key_path=None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class ContractError(PairlabError, ValueError):
    """Input data violate an operation's precondition (unsorted, bad binning, ...)."""

    exit_code = 3


class DegenerateDataError(ContractError):
    pass


class PhysicalityError(PairlabError, ArithmeticError):
    """A channel produced a matrix that is not a density matrix beyond rounding."""

    exit_code = 3


class SamplingError(PairlabError, RuntimeError):
    exit_code = 3


class FitError(PairlabError, RuntimeError):
    exit_code = 4

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals

"""Exception hierarchy; CLI exit codes are attached to the classes."""


class PerturbedLKError(Exception):
    exit_code = 1


class DomainError(PerturbedLKError, ValueError):
    """An argument lies outside the domain of the mathematical operation."""

    exit_code = 2


class ConfigError(PerturbedLKError, ValueError):
    exit_code = 2


class UsageError(PerturbedLKError, RuntimeError):
    exit_code = 2


class NumericalError(PerturbedLKError, ArithmeticError):
    """Quadrature or series evaluation failed to reach the requested accuracy."""

    exit_code = 3

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class EmbeddingError(PerturbedLKError, RuntimeError):
    """Circulant embedding produced too much negative spectral mass."""

    exit_code = 4

    def __init__(self, message, clipped_fraction, shape):
        super().__init__(message)
        self.clipped_fraction = clipped_fraction
        self.shape = shape

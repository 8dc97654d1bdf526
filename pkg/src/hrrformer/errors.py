"""Exception hierarchy shared by every layer of the package."""


class HrrformerError(Exception):
    """Base class for all package errors."""


class DimensionError(HrrformerError, ValueError):
    """Operand shapes do not agree."""


class ConfigError(HrrformerError, ValueError):
    """An invalid hyperparameter or configuration value."""


class ContractError(HrrformerError, ValueError):
    """A caller violated an operation precondition."""


class NonFiniteError(HrrformerError, FloatingPointError):
    """An operation produced NaN or Inf."""


class SingularInverseError(HrrformerError, ArithmeticError):
    """A frequency bin is too small for an exact HRR inverse."""

    def __init__(self, bin_index: int, magnitude: float, eps: float):
        self.bin_index = bin_index
        self.magnitude = magnitude
        self.eps = eps
        super().__init__(
            f"exact inverse undefined: frequency bin {bin_index} has magnitude "
            f"{magnitude:.3e} < eps_inv={eps:.1e}"
        )


class DivergenceError(HrrformerError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at step {step}")


class IngestionError(HrrformerError, OSError):
    """A dataset file could not be read or parsed."""

    def __init__(self, filename, reason: str):
        self.filename = str(filename)
        super().__init__(f"{self.filename}: {reason}")


class OutOfMemoryError(HrrformerError, MemoryError):
    """Live tensor bytes exceeded the configured budget."""

"""Exception types shared across the package."""


class PfmnError(Exception):
    """Base class for all library errors."""


class ConfigError(PfmnError):
    """Invalid configuration value or missing required setting."""


class DimensionError(PfmnError):
    """Tensor/array shape mismatch."""


class DomainError(PfmnError):
    """Input outside the mathematical domain of an operation."""


class ContractError(PfmnError):
    """An internal precondition was violated by the caller."""


class FormatError(PfmnError):
    """Malformed binary or JSON artifact on disk."""


class NumericError(PfmnError):
    """Non-finite values or numerically impossible request."""


class DecodeExhausted(PfmnError):
    """The candidate window for decoding is empty."""


class DecodeInfeasible(PfmnError):
    """No feasible candidate remains under the selection prior."""

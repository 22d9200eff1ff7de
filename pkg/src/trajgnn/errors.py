"""Exception types shared across the package.

The CLI maps these to exit code 2 (bad input / contract violation);
plain OSError maps to exit 1.
"""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class ShapeError(ContractError):
    """Tensor or array shapes do not agree."""


class SchemaError(ContractError):
    """An input file is missing required structure (columns, header)."""


class ParseError(ContractError):
    """An input file has a malformed cell or record."""


class ConfigError(ContractError):
    """A configuration value is invalid or inconsistent with another."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss."""

"""Exception types shared across the package."""


class TransfirError(Exception):
    """Base class for all package errors."""


class ShapeError(TransfirError):
    """Operand shapes are incompatible."""


class NumericError(TransfirError):
    """Non-finite values where finite ones are required."""


class ConfigError(TransfirError):
    """Invalid configuration value (sizes, ratios, kernel widths, ...)."""


class ContractError(TransfirError):
    """A documented precondition or usage rule was violated."""


class ParseError(TransfirError):
    """Malformed input file content."""


class VocabError(TransfirError):
    """Identifier not resolvable in the vocabulary."""


class IntegrityError(TransfirError):
    """File content inconsistent with its own declaration."""


class CheckpointVersionError(TransfirError):
    """Checkpoint format version not supported by this build."""

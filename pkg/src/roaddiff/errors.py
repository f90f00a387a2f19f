"""Exception hierarchy shared across the package.

Contract violations (bad shapes, mismatched kinds, broken preconditions)
and data problems (malformed files, NaNs) are kept in separate branches so
the CLI can map them to distinct exit codes.
"""


class RoadDiffError(Exception):
    """Base class for all package-specific errors."""


class ContractError(RoadDiffError):
    """A call violated an operation's contract."""


class ShapeError(ContractError):
    """Tensor or matrix shapes are incompatible."""


class InvalidLaneCount(ContractError):
    """A road was declared with fewer than one lane."""


class ZeroDegree(ContractError):
    """Adjacency normalization hit an isolated node without self-loops."""


class ConfigError(ContractError):
    """A configuration value is out of its valid range."""


class CheckpointError(ContractError):
    """A checkpoint does not match the requested graph or is corrupt."""


class DataError(RoadDiffError):
    """Input data is malformed (non-finite values, bad timestamps, ...)."""


class SchemaError(DataError):
    """A file does not follow the expected schema."""

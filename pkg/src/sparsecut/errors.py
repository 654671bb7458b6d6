"""Exception hierarchy.

Everything raised on purpose by this package derives from SparseCutError so
callers (and the CLI) can separate usage errors from genuine bugs with a
single except clause.
"""


class SparseCutError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SparseCutError, ValueError):
    """Operands have incompatible, non-2D, or otherwise invalid shapes."""


class ConfigError(SparseCutError, ValueError):
    """Bad configuration value, malformed input file, or out-of-range setting."""


class CacheError(SparseCutError, RuntimeError):
    """A forward cache was consumed twice or paired with the wrong block."""


class NumericError(SparseCutError, ArithmeticError):
    """A computation produced non-finite values where finite ones are required."""

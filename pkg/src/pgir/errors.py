"""Exception types shared across the package."""


class PgirError(Exception):
    """Base class for all package errors."""


class DimensionError(PgirError, ValueError):
    """Array or tensor shapes do not satisfy an operation's requirements."""


class ParameterError(PgirError, ValueError):
    """A scalar parameter is outside its admissible range."""


class RangeError(PgirError, ValueError):
    """Input values fall outside the domain an operation accepts."""


class ContractError(PgirError, RuntimeError):
    """A caller violated an operation's precondition (e.g. missing gradient)."""


class FormatError(PgirError, ValueError):
    """A file on disk is malformed or truncated."""


class UnsupportedVersionError(FormatError):
    pass


class SchemaError(PgirError, ValueError):
    """Configuration or manifest content fails validation."""


class MissingFileError(PgirError, FileNotFoundError):
    pass


class ConfigError(PgirError, ValueError):
    """Run configuration or command-line flags are invalid."""

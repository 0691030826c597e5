"""Exception types shared across the package."""


class StbnError(Exception):
    """Base class for all package-specific errors."""


class InvalidParameterError(StbnError, ValueError):
    """A constructor or operation received an out-of-range parameter."""


class InvalidInputError(StbnError, ValueError):
    """An operation received structurally invalid data (shape, order, emptiness)."""


class EmptySubsetError(StbnError):
    """A filtered subset has no members for the requested threshold."""


class TileFormatError(StbnError):
    """Base class for tile file format violations."""


class MagicMismatchError(TileFormatError):
    """The file does not start with the expected tile magic."""


class UnsupportedVersionError(TileFormatError):
    """The tile file declares a version this reader does not understand."""


class TruncatedPayloadError(TileFormatError):
    """The tile payload is shorter than the header promises."""


class TableParseError(StbnError, ValueError):
    """A kernel table file could not be parsed; the message carries the line number."""


class TableValidationError(StbnError, ValueError):
    """A parsed kernel table violates a kernel invariant; the message names it."""


class ConfigError(StbnError, ValueError):
    """A CLI configuration file or flag combination is invalid."""

"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or generator parameters."""


class TraceFormatError(ValueError):
    """File does not carry the expected magic/header."""


class TraceParseError(ValueError):
    """Malformed record; message names the byte or line offset."""


class DataError(ValueError):
    """Input data violates an operation precondition (e.g. too short)."""

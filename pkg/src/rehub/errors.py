"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are inconsistent with an operation's contract."""


class InvalidParameterError(ValueError):
    """A scalar argument is outside its allowed range."""


class ContractError(RuntimeError):
    """Structurally misaligned inputs (e.g. scores not matching an assignment)."""


class GraphFormatError(ValueError):
    """A graph file violates the JSON schema."""


class ConfigError(ValueError):
    """An invalid or unknown configuration key/value."""

"""Error types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


class ConfigError(ValueError):
    """A configuration value violates an invariant."""


class FormatError(ValueError):
    """A binary container is malformed; message carries the offset."""

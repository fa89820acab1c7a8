"""Exception hierarchy shared across the toolkit.

Every error raised on a user-facing path derives from RntrajError so the
CLI can report a stable, machine-parseable error class.
"""


class RntrajError(Exception):
    """Base class for toolkit errors."""


class ParseError(RntrajError):
    """Malformed input file (network CSV, corpus, embeddings, checkpoint, config)."""


class ValidationError(RntrajError):
    """Input violates a documented invariant (dangling reference, bad range, ...)."""


class RoutingError(RntrajError):
    """No route could be found on the road network."""


class ShapeError(RntrajError):
    """Tensor shape does not match the declared configuration."""


class NonFiniteError(RntrajError):
    """A non-finite value was produced; carries the layer index when known."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class DecodeError(RntrajError):
    """A generated trajectory could not be decoded; carries the raw tensor."""

    def __init__(self, message: str, tensor=None):
        super().__init__(message)
        self.tensor = tensor


class ConfigError(RntrajError):
    """Bad configuration file or flag combination."""

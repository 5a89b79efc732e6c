class UncertainError(Exception):
    """Base class for errors raised by this package."""


class InputError(UncertainError):
    """Malformed input: bad JSON, bad annotation or query text, schema mismatch."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class AnnotationSyntaxError(InputError):
    pass


class QuerySyntaxError(InputError):
    pass


class SchemaError(InputError):
    pass


class CircuitError(UncertainError):
    pass


class IncompleteValuationError(UncertainError):
    pass


class LimitExceeded(UncertainError):
    """A configurable size guard tripped (brute-force cap, state-space cap, ...)."""


class DecompositionError(UncertainError):
    pass

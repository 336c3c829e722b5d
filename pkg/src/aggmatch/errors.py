"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside the domain an operation accepts."""


class ParseError(ValueError):
    """A dataset file could not be parsed.

    ``offset`` is the byte offset where parsing failed (``None`` if unknown).
    """

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ConfigError(ValueError):
    """An experiment configuration is malformed or out of range."""


class EmptyCandidatesError(LookupError):
    """Aggregation was asked to run with no candidates.

    Callers should fall back to the warm-up pseudo-labeling path.
    """


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss or gradient.

    ``diagnostics`` holds a JSON-serializable snapshot of what was going on.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}

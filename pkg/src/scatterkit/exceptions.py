"""Exception hierarchy.

Every error raised on purpose by the package derives from ``ScatterError`` so
callers (and the CLI) can map failures to exit codes by class.
"""


class ScatterError(Exception):
    """Base class for all package errors."""


class InputError(ScatterError, ValueError):
    """Malformed or structurally inconsistent input."""


class DimensionMismatchError(InputError):
    """Embedding dimensions disagree."""


class DegenerateInputError(InputError):
    """Input is well-formed but mathematically degenerate (e.g. a zero vector)."""


class ConfigurationError(InputError):
    """A configuration cannot be satisfied."""


class IntegrityError(InputError):
    """Stored or returned data contradicts what is already known."""


class CacheMissError(InputError):
    """Offline mode was requested and a text has no cached embedding."""

    def __init__(self, missing):
        self.missing = list(missing)
        preview = ", ".join(repr(t[:40]) for t in self.missing[:3])
        super().__init__(f"{len(self.missing)} text(s) not in embedding cache: {preview}")


class RunExistsError(InputError):
    """A run id is already taken and overwrite was not requested."""


class FingerprintMismatchError(InputError):
    """A stored run was produced under a different configuration."""

    def __init__(self, stored, current):
        self.stored = stored
        self.current = current
        super().__init__(f"config fingerprint mismatch: stored={stored} current={current}")


class TransportError(ScatterError):
    """The embedding service could not be reached or kept failing."""


class NumericError(ScatterError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)

"""Exception hierarchy. The CLI maps these onto exit codes."""


class GroundcheckError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(GroundcheckError, ValueError):
    """Input violates a documented invariant (bad file, bad config, bad arguments)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TemplateError(ValidationError):
    """A prompt template or pattern asset is missing or unreadable."""


class BackendError(GroundcheckError):
    """A remote judge/generation backend failed or returned garbage."""


class BudgetExceeded(GroundcheckError):
    """The simulated page allocator ran out of pages."""

"""Exception hierarchy shared by all modules."""


class ConfSpecError(Exception):
    """Base class for every error raised by this package."""


class InvalidClassParam(ConfSpecError, ValueError):
    pass


class ResolutionTooSmall(ConfSpecError, ValueError):
    pass


class EmptySelection(ConfSpecError, ValueError):
    pass


class NonManifoldEdge(ConfSpecError):
    pass


class UnsupportedClass(ConfSpecError, ValueError):
    pass


class NonpositiveLength(ConfSpecError, ValueError):
    pass


class OutOfCollar(ConfSpecError, ValueError):
    pass


class DegenerateTriangle(ConfSpecError):
    pass


class ConvergenceFailure(ConfSpecError):
    """Eigensolver gave up; ``residuals`` holds what was achieved (may be None)."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class IncompleteTable(ConfSpecError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "incomplete table"


class InconsistentSpec(ConfSpecError, ValueError):
    pass


class NotApplicable(ConfSpecError, ValueError):
    pass


class WrongDirection(ConfSpecError, ValueError):
    pass


class BallsOverlap(ConfSpecError, ValueError):
    pass


class ConfigError(ConfSpecError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ClusterAmbiguity(UserWarning):
    """The eigenvalue cluster at index k also contains lower indices."""

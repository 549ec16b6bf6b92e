"""Exception hierarchy shared by all modules."""


class SemimixError(Exception):
    """Base class for library errors."""


class DomainError(SemimixError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(SemimixError, ValueError):
    """Lag vectors or histories have the wrong length."""


class ContractViolation(SemimixError):
    """A user supplied intensity map broke its declared contract."""


class InfeasibleDriftError(SemimixError, ValueError):
    """Coefficient sums leave no room for a geometric drift condition."""


class ConstructionError(SemimixError):
    """A drift-constant construction produced a nonpositive constant."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigurationError(SemimixError, ValueError):
    """Experiment or run configuration is invalid."""

    def __init__(self, message, problems=None):
        self.problems = list(problems) if problems else [message]
        super().__init__(message)


class InsufficientDataError(SemimixError):
    """Too few usable points to fit a model."""


class InconsistentInputError(SemimixError, ValueError):
    """Input cannot have been produced by the assumed generating map."""

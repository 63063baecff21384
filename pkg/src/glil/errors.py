"""Exception hierarchy.

Everything a caller can fix by changing inputs derives from ``GlilError``;
the CLI maps those to exit code 1.
"""


class GlilError(Exception):
    """Base class for domain and configuration errors."""


class DomainError(GlilError, ValueError):
    pass


class StabilityError(GlilError):
    pass


class GrowthError(GlilError):
    pass


class ShapeError(GlilError, ValueError):
    pass


class OffGridError(GlilError, ValueError):
    pass


class CoverageError(GlilError, ValueError):
    pass


class GridError(GlilError, ValueError):
    pass


class ConvergenceError(GlilError):
    pass


class SizeError(GlilError):
    pass


class BudgetError(GlilError, ValueError):
    pass


class QuadratureError(GlilError):
    pass


class ConfigError(GlilError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class ValidationError(ConfigError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n  " + "\n  ".join(self.violations))

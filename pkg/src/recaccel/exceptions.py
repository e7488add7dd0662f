"""Exception hierarchy shared across the package."""


class RecAccelError(Exception):
    """Base class for all package errors."""


class ShapeError(RecAccelError, ValueError):
    """Operand shapes do not line up."""


class ConfigError(RecAccelError, ValueError):
    """A configuration value is outside its supported domain."""


class DomainError(RecAccelError, ValueError):
    """Input data violates a mathematical precondition."""


class NumericError(RecAccelError, ArithmeticError):
    """A non-finite value appeared during computation."""


class ReportError(RecAccelError, ValueError):
    """A report cannot be produced from incomplete inputs."""

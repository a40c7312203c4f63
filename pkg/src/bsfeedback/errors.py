"""Exception types shared across the package."""


class BsfError(Exception):
    pass


class DimensionError(BsfError, ValueError):
    pass


class ConfigError(BsfError, ValueError):
    pass


class FormatError(BsfError, ValueError):
    pass


class TrainingError(BsfError, RuntimeError):
    pass


class SingularityError(BsfError, ArithmeticError):
    pass


class UndefinedError(BsfError, ArithmeticError):
    """Raised when a quantity is undefined, e.g. normalising by a zero-norm vector."""

"""Exception types raised by the simulator."""


class FloaError(Exception):
    """Base class for simulator errors."""


class StructuralError(FloaError, ValueError):
    """Shapes or dimensions do not match the model architecture."""


class UsageError(FloaError, ValueError):
    """An operation was called with arguments outside its contract."""


class NumericError(FloaError, ArithmeticError):
    """A computation produced non-finite values."""


class DegenerateChannelError(FloaError, ArithmeticError):
    """A channel magnitude of exactly zero cannot be inverted."""


class DegenerateStandardizationError(FloaError, ArithmeticError):
    """The global gradient spread is too small to standardize by."""


class DegenerateGradientError(FloaError, ArithmeticError):
    """Gradient statistics are identically zero, so attack power is unbounded."""


class NoConvergenceGuarantee(FloaError, ValueError):
    """The signal constant omega is non-positive, so no rate bound applies."""


class ConfigError(FloaError, ValueError):
    """A configuration document failed validation.

    ``problems`` lists ``(field_path, message)`` pairs.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"{path}: {msg}" for path, msg in self.problems]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))

"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not fit the operation."""


class DegenerateInputError(ValueError):
    """Input is numerically degenerate (e.g. a zero-norm vector)."""


class UsageError(ValueError):
    """API called with arguments that violate its contract."""


class NumericError(ArithmeticError):
    """NaN or Inf produced or supplied."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step

"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition (shape, range, size)."""


class NumericalError(ArithmeticError):
    """A numerical routine could not reach its accuracy contract."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class FormatError(ValueError):
    """A serialized file is malformed. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DivergenceError(RuntimeError):
    """Training produced non-finite values."""

    def __init__(self, message, iteration=None, step=None):
        super().__init__(message)
        self.iteration = iteration
        self.step = step


class TrainingError(RuntimeError):
    """A closed-form sub-step failed even after the ridge fallback."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration

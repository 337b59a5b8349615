"""Exception types shared across the package."""


class FormatError(ValueError):
    """A binary container or dataset file is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SingularityError(ArithmeticError):
    """A requested inverse power hits a (near-)zero eigenvalue."""


class FeasibilityError(ArithmeticError):
    """A Chernoff parameter t makes the determinant factor non-positive."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch

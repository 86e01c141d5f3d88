"""Exception types shared across the package."""


class EstimationError(RuntimeError):
    """A density or mixture estimate cannot be formed from the given samples."""


class ParseError(ValueError):
    """A data file failed validation; ``row`` is the offending 1-based data row."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class EmptyBorrowSignal(RuntimeError):
    """No stratum contributes borrowable information; analysis should fall back
    to the vague prior with full vague weight."""

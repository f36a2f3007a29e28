"""Exception types shared across the package."""


class LogskewError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(LogskewError):
    """A matrix required to be positive definite is not."""


class NotPSD(LogskewError):
    """A matrix required to be positive semi-definite has a genuinely
    negative eigenvalue (below the rounding-noise threshold)."""


class DomainError(LogskewError):
    """An argument lies outside the mathematical domain of the operation."""


class InvalidSkewness(LogskewError):
    """A skewness matrix violates the spectral-norm validity constraint."""

    def __init__(self, norm: float, message: str | None = None):
        self.norm = float(norm)
        super().__init__(message or f"skewness matrix has spectral norm {self.norm:.6g}, "
                                    f"which is not below 1")


class NotBlockDiagonal(LogskewError):
    """A scale matrix has cross-covariance between kept and dropped blocks."""


class BadPartition(LogskewError):
    """A block partition is inconsistent with the matrix dimensions."""


class DimensionError(LogskewError):
    """An input has an unsupported dimension."""


class DimensionTooLarge(DimensionError):
    """The requested integration dimension exceeds the supported cap."""


class TooFewDraws(LogskewError):
    """Not enough retained draws for the requested summary."""


class NonFinite(LogskewError):
    """A computation produced NaN or infinite values where finiteness is required."""


class ParseError(LogskewError):
    """A data file failed to parse.

    Carries the 1-based row and column of the offending cell.
    """

    def __init__(self, row: int, column: int, message: str):
        self.row = int(row)
        self.column = int(column)
        super().__init__(f"row {row}, column {column}: {message}")


class NonPositiveValue(LogskewError):
    """Data value outside the positive support.

    Carries the 1-based row indices of the violations.
    """

    def __init__(self, rows, message: str | None = None):
        self.rows = [int(r) for r in rows]
        super().__init__(message or f"non-positive value(s) at row(s) {self.rows}")


class EmptyFile(LogskewError):
    """A data file contains no data rows."""

"""Exception hierarchy shared across the toolkit.

Two broad families matter for the CLI exit codes: DataError (malformed,
insufficient, or out-of-range input; exit 2) and AlgorithmError (the data was
fine but the estimation could not produce a trustworthy answer; exit 3).
"""


class ToolkitError(Exception):
    pass


class DataError(ToolkitError):
    """Bad or insufficient input data."""


class OrderingError(DataError):
    """Timestamps not strictly increasing where required."""


class InsufficientDataError(DataError):
    """Fewer samples than the operation needs."""


class RangeError(DataError):
    """Query outside the supported interval."""


class NoOverlapError(DataError):
    """Two inputs share no usable common region."""


class AlgorithmError(ToolkitError):
    """Estimation failed despite valid input."""


class DegenerateMotionError(AlgorithmError):
    """Excitation insufficient to constrain the estimate."""


class LowConfidenceError(AlgorithmError):
    """Correlation peak below the confidence threshold."""

    def __init__(self, message, peak_correlation):
        super().__init__(message)
        self.peak_correlation = peak_correlation

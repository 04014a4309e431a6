"""Exception types shared across the pipeline.

Everything raised on bad data derives from TradeDataError so the CLI can
map data problems to exit code 1 and leave usage errors (exit code 2) to
argparse.
"""


class TradeDataError(Exception):
    """A data-level failure: bad input rows, missing coverage, degenerate samples."""


class ParseError(TradeDataError):
    """A malformed row in an input file."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class CoverageError(TradeDataError):
    """A required covariate, distance pair, or vocabulary entry is missing."""


class SingularDesignError(TradeDataError):
    """The normal equations are singular; carries the offending column names."""

    def __init__(self, columns, message=None):
        self.columns = tuple(columns)
        if message is None:
            message = "singular design matrix; dependent column(s): " + ", ".join(self.columns)
        super().__init__(message)

"""Exceptions raised by sbfiml and the exit codes the CLI maps them to."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class SbfimlError(ValueError):
    """Base class for every error sbfiml raises on purpose."""

    exit_code = EXIT_USAGE


class DataError(SbfimlError):
    """Input data is missing, malformed, or unusable for the requested task."""

    exit_code = EXIT_DATA


class NumericalError(SbfimlError):
    """A numerical routine hit a degenerate case it cannot recover from."""

    exit_code = EXIT_NUMERICAL

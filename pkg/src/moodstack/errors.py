"""Exception hierarchy shared across the package."""


class MoodstackError(Exception):
    """Base class for all errors raised by this package."""


class DataError(MoodstackError):
    """Invalid or malformed input data (files, matrices, vocabularies)."""


class TripletParseError(DataError):
    """A triplets file line could not be parsed."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class FactorizationError(MoodstackError):
    """Factorization could not proceed (e.g. singular normal equations)."""


class UndefinedApError(MoodstackError):
    """Average precision is undefined (no positive labels)."""


class UsageError(MoodstackError):
    """Bad command-line usage."""

"""Exception hierarchy shared by every package.

Each error carries the process exit code the CLI reports for it.
"""


class DecodingError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class UsageError(DecodingError):
    """Invalid arguments or configuration values."""

    exit_code = 64


class DomainError(UsageError):
    """A numeric parameter lies outside its admissible range."""


class KeywordParseError(DecodingError):
    """A keyword or model table file could not be parsed."""

    exit_code = 2

    def __init__(self, message: str, line: int = 0):
        self.line = line
        if line:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptySetError(KeywordParseError):
    """The constraint set contains no sequences."""


class TokenOutOfRangeError(KeywordParseError):
    """A token id is not below the vocabulary size."""


class FormatError(DecodingError):
    """An index file has a bad magic, version or checksum."""

    exit_code = 3


class CorruptionError(FormatError):
    """An index file decoded cleanly but violates the sort invariants."""


class PrefixTooLongError(UsageError):
    """A prefix is longer than the index or model allows."""


class InvalidDistributionError(DecodingError):
    """A distribution violates the probability invariants."""


class ZeroMassError(DecodingError):
    """A mask selects no coordinate with positive probability."""


class DeadEndError(ZeroMassError):
    """The sampler reached a prefix whose valid top-M mass is zero."""


class MaxLenExceededError(DecodingError):
    """A candidate grew past the sampler's length guard."""


class NotMemberError(DecodingError):
    """A sequence expected to be in the constraint set is not."""


class FallbackDegenerateError(DecodingError):
    """Importance resampling weights summed to zero."""


class TransportError(DecodingError):
    """The external model endpoint could not be reached or went away."""

    exit_code = 4


class ProtocolError(TransportError):
    """The external model sent a malformed response."""


class InvalidResponseError(ProtocolError, InvalidDistributionError):
    """A received distribution violates the probability invariants."""


class EnumerationBudgetExceeded(DecodingError):
    """An exact oracle would need more terms than its budget allows."""

    exit_code = 5


class DegenerateError(DecodingError):
    """The model assigns zero probability to the whole constraint set."""


class SupportMismatchError(DomainError):
    """A distribution puts mass where the reference distribution has none."""

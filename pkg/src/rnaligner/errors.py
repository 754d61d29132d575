"""Exception types shared across the package.

UsageError and ConfigError mean the caller asked for something invalid;
FormatError means a file or corpus entry is malformed. The CLI maps the
first group to exit code 1 and the second (plus numeric/data failures)
to exit code 2.
"""


class AlignerError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(AlignerError):
    """An API or command line was invoked incorrectly."""


class ConfigError(AlignerError):
    """A configuration value is out of its legal range or inconsistent."""


class ShapeError(AlignerError):
    """Tensor shapes do not satisfy an operation's contract."""


class FormatError(AlignerError):
    """A file on disk does not match its documented byte/line format."""


class VocabularyError(AlignerError):
    """A label id falls outside the vocabulary's id range."""


class InfeasibleError(AlignerError):
    """A target sequence is longer than the encoded input can emit."""


class NumericError(AlignerError):
    """A computation produced or received non-finite / invalid values."""


class MetricError(AlignerError):
    """A metric is undefined for the given inputs."""

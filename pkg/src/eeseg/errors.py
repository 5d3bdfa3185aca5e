"""Exception taxonomy shared across the runtime.

Three families map onto the CLI exit codes: configuration problems
(bad shapes, bad parameter ranges, mismatched model/data) exit with 2,
data and file-format problems exit with 3. Usage errors signal API
misuse inside a process and are never expected from a clean CLI run.
"""


class EesegError(Exception):
    """Base class for all runtime errors."""


class ConfigurationError(EesegError):
    """Invalid configuration: shape mismatch, bad parameter range, K mismatch."""

    exit_code = 2


class UsageError(EesegError):
    """API misuse, e.g. ledger entries recorded out of pipeline order."""

    exit_code = 2


class DataFormatError(EesegError):
    """Malformed file payloads or out-of-range data values."""

    exit_code = 3


class UndefinedMetricError(DataFormatError):
    """Metric has no defined value, e.g. mIoU with every class denominator zero."""

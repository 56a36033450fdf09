"""Exception taxonomy shared across the toolkit."""


class QadError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(QadError, ValueError):
    """Data handed to an operation violates its preconditions."""


class InvalidConfigError(QadError, ValueError):
    """A configuration value is out of its legal range or unknown."""


class UnsupportedKernelError(QadError, ValueError):
    """Requested operation is undefined for this kernel family."""


class FormatError(QadError, ValueError):
    """A serialized artifact (checkpoint, gram dump) is corrupt or mismatched."""


class UsageError(QadError, RuntimeError):
    """An API was called out of protocol order (e.g. revert before apply)."""


class UndefinedMetricError(QadError, ValueError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class NumericError(QadError, RuntimeError):
    """Training or evaluation produced non-finite values."""

"""Exception hierarchy shared by all infmae modules."""


class InfMAEError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(InfMAEError, ValueError):
    """An array has a shape the operation cannot accept."""


class ConfigurationError(InfMAEError, ValueError):
    """A configuration value is out of its allowed range."""


class ConsistencyError(InfMAEError, ValueError):
    """Two inputs that must agree (plan vs. predictions, ids vs. tokens) do not."""


class DataError(InfMAEError, ValueError):
    """Training or probe data is empty or malformed."""


class IntegrityError(InfMAEError, IOError):
    """A checkpoint file failed its checksum or is truncated."""


class VersionError(InfMAEError, IOError):
    """A checkpoint was written with an unsupported format version."""


class NonFiniteLossError(InfMAEError, FloatingPointError):
    def __init__(self, record):
        super().__init__(f"non-finite loss at step {record.step}: {record.loss!r}")
        self.record = record

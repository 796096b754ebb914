"""Exception hierarchy. Each family maps to a distinct CLI exit code."""


class CdbError(Exception):
    exit_code = 4


class ConfigError(CdbError, ValueError):
    """Invalid configuration, unknown key, or inconsistent spec."""

    exit_code = 2


class DataError(CdbError):
    exit_code = 3


class DataFormatError(DataError, ValueError):
    """A file does not follow the expected on-disk format."""


class ConsistencyError(DataError, ValueError):
    """Paired inputs disagree (e.g. image and label counts)."""


class CapacityError(DataError, ValueError):
    """Not enough source samples to satisfy a request."""


class TrainingError(CdbError, RuntimeError):
    """Raised when optimisation produces a non-finite loss."""

    def __init__(self, message, epoch=None, batch=None, params=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.params = params


class AggregationError(CdbError, ValueError):
    pass

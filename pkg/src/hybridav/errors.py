"""Exception hierarchy.

Data problems (bad files, infeasible corpora) derive from :class:`DataError`,
numerical failures from :class:`NumericError`; the CLI maps these onto exit
codes 2 and 3.
"""


class AVError(Exception):
    """Base class for every error raised by this package."""


class DataError(AVError):
    pass


class NumericError(AVError):
    pass


class ConfigError(AVError, ValueError):
    pass


class DimensionMismatch(AVError, ValueError):
    pass


class DocumentTooShort(DataError):
    pass


class InvalidHyperparam(ConfigError):
    pass


class InvalidThresholds(ConfigError):
    pass


class InvalidEpsilon(ConfigError):
    pass


class InvalidConfig(ConfigError):
    pass


class EvenEnsemble(ConfigError):
    pass


class EmptyGrid(ConfigError):
    pass


class NotPositiveDefinite(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


class EmptyConfidentSet(NumericError):
    pass


class SingleClass(DataError):
    pass


class NoPositives(DataError):
    pass


class CorpusTooSmall(DataError):
    pass


class QuotaInfeasible(DataError):
    pass


class MalformedRecord(DataError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


class IdMismatch(DataError):
    pass

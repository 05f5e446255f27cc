"""Exception hierarchy.

Each error carries an ``exit_code`` used by the command line front end:
2 usage/config, 3 data, 4 numerical.
"""


class LFGNNError(Exception):
    exit_code = 1


class UsageError(LFGNNError):
    exit_code = 2


class ConfigError(UsageError):
    pass


class DataError(LFGNNError):
    exit_code = 3


class NumericalError(LFGNNError):
    exit_code = 4


# numerics
class InsufficientData(DataError):
    pass


class ShapeError(LFGNNError, ValueError):
    exit_code = 3


class SingularMatrix(NumericalError):
    pass


# signal
class UnsupportedRatio(ConfigError):
    pass


class BandError(ConfigError):
    pass


# causality
class SingularCovariance(SingularMatrix):
    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class SurrogateFailure(NumericalError):
    pass


class RankError(NumericalError):
    pass


class InvalidOrder(ConfigError):
    pass


# io / data
class IoError(DataError):
    pass


class FormatError(DataError):
    pass


class CorruptFile(DataError):
    pass


class StabilityError(ConfigError):
    pass


# training
class StratificationError(DataError):
    pass


class DegenerateTest(NumericalError):
    pass

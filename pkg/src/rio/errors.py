"""Exception hierarchy.

``DataError`` covers malformed or inconsistent input; ``EstimationError``
covers numerical failures. The CLI maps them to exit codes 2 and 3.
"""


class RioError(Exception):
    pass


class DataError(RioError):
    pass


class EstimationError(RioError):
    pass


# radar_velocity
class InsufficientPoints(EstimationError):
    pass


class DegenerateGeometry(EstimationError):
    pass


class NonConvergence(EstimationError):
    pass


# imu
class OutOfRange(DataError):
    pass


class EmptyInterval(DataError):
    pass


class NonMonotoneTime(DataError):
    pass


class NotStatic(EstimationError):
    pass


class DegenerateGravity(EstimationError):
    pass


# smoother
class OutOfOrder(DataError):
    pass


class MissingImu(DataError):
    pass


class SolverFailure(EstimationError):
    pass


# harness
class MissingFile(DataError):
    pass


class ParseError(DataError):
    pass


class CalibrationMissing(DataError):
    pass


class NoOverlap(DataError):
    pass


class InitializationFailed(EstimationError):
    pass

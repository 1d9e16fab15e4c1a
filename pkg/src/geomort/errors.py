"""Exception hierarchy.

Errors fall into two families so that the command line can map them to
exit codes: :class:`DataError` (bad or insufficient input, exit 2) and
:class:`NumericalError` (a solver or model failed, exit 3).
"""


class GeomortError(Exception):
    pass


class ConfigError(GeomortError):
    pass


class DataError(GeomortError, ValueError):
    pass


class NumericalError(GeomortError, ArithmeticError):
    pass


# geo
class MalformedRecord(DataError):
    pass


class MissingCentroid(DataError):
    pass


class InsufficientMainland(DataError):
    pass


# imputation
class UnreachableRegion(DataError):
    pass


class EmptyNeighborhood(DataError):
    pass


class NoDataAvailable(DataError):
    pass


# benchmark
class IncompleteInput(DataError):
    pass


class EmptyMask(DataError):
    pass


class RegionMismatch(DataError):
    pass


class EmptyField(DataError):
    pass


# temporal
class UnbracketedGap(DataError):
    pass


class MissingSource(DataError):
    pass


class ZeroWeightTarget(DataError):
    pass


# anomaly
class DegenerateSample(DataError):
    pass


class NonPositiveSample(DataError):
    pass


class NoConvergence(NumericalError):
    pass


class AllFitsFailed(NumericalError):
    pass


class EmptyAnomalySet(DataError):
    pass


# gbt
class EmptyData(DataError):
    pass


class InsufficientData(DataError):
    pass


class NoSplits(NumericalError):
    pass


# autoenc
class DimensionMismatch(DataError):
    pass


class StaleCache(GeomortError, RuntimeError):
    pass


class EmptyTrainingSet(DataError):
    pass


class EmptyBaseline(DataError):
    pass


# geojson
class FipsMismatch(DataError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("regions without a match: " + ", ".join(self.missing))

"""Exception hierarchy shared across the package."""


class TrsbtsError(Exception):
    """Base class for all package errors."""


class DimMismatch(TrsbtsError):
    pass


class ShapeMismatch(TrsbtsError):
    pass


class NotPsd(TrsbtsError):
    pass


class BadLength(TrsbtsError):
    pass


class TimeOutOfRange(TrsbtsError):
    pass


class EndpointOffLeaf(TrsbtsError):
    pass


class KnotMismatch(TrsbtsError):
    pass


class DegenerateData(TrsbtsError):
    pass


class SingularDesign(TrsbtsError):
    pass


class AllExcluded(TrsbtsError):
    pass


class EmptySurrogate(TrsbtsError):
    pass


class NonFiniteState(TrsbtsError):
    pass


class TooShort(TrsbtsError):
    pass


class ZeroVariance(TrsbtsError):
    pass


class MissingStats(TrsbtsError):
    pass


class EmptyInput(TrsbtsError):
    pass


class InsufficientData(TrsbtsError):
    pass


class DegeneratePath(TrsbtsError):
    pass


class NonIncreasingHorizons(TrsbtsError):
    pass


class ConfigError(TrsbtsError):
    """Invalid experiment configuration (CLI exit code 2)."""


class DataError(TrsbtsError):
    """Missing or malformed input data (CLI exit code 3)."""

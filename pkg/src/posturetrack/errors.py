"""Exception types raised across the package."""


class PostureError(ValueError):
    """Base class for data and contract violations."""


class DataError(PostureError):
    """Input data violates a precondition."""


class ZeroSignal(DataError):
    pass


class NonFinite(DataError):
    pass


class EmptyStream(DataError):
    pass


class EmptyDataset(DataError):
    pass


class EpisodeTooShort(DataError):
    pass


class WindowTooShort(DataError):
    pass


class AxisConventionMismatch(DataError):
    pass


class UnknownFeature(PostureError, KeyError):
    pass


class AxisRequired(PostureError):
    pass


class AxisForbidden(PostureError):
    pass


class DimensionMismatch(DataError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class LengthMismatch(DimensionMismatch):
    pass


class EmptyTrainingSet(DataError):
    pass


class EmptySequence(DataError):
    pass


class EmptyEpisode(DataError):
    pass


class UnknownLabel(DataError):
    pass


class UnknownClassCount(DataError):
    pass


class SingularCovariance(DataError):
    pass


class TooFewEpisodes(DataError):
    pass


class SingleSubject(DataError):
    pass


class EmptyMatrix(DataError):
    pass


class ZeroMean(DataError):
    pass


class UnfittedModel(PostureError):
    pass


class NumericalAbort(ArithmeticError):
    """Training produced non-finite gradients."""


class NonConvergence(RuntimeWarning):
    """Iterative solver stopped at its iteration cap."""

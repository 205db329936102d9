"""Exception hierarchy shared across the package."""


class PrecipSlomoError(Exception):
    """Base class for all package-specific errors."""


class EmptyCrop(PrecipSlomoError):
    pass


class ExtentMismatch(PrecipSlomoError):
    pass


class NegativeInput(PrecipSlomoError):
    pass


class ShapeMismatch(PrecipSlomoError):
    pass


class TOutOfRange(PrecipSlomoError):
    pass


class UninitializedParams(PrecipSlomoError):
    pass


class MisalignedDem(PrecipSlomoError):
    pass


class EmptyMask(PrecipSlomoError):
    pass


class NonFiniteLoss(PrecipSlomoError):
    pass


class SeriesTooShort(PrecipSlomoError):
    pass


class DivergedLoss(PrecipSlomoError):
    pass


class CorruptCheckpoint(PrecipSlomoError):
    pass


class IncompatibleSteps(PrecipSlomoError):
    pass


class InstabilityDetected(PrecipSlomoError):
    pass


class TimestampMismatch(PrecipSlomoError):
    pass


class AllZeroSeries(PrecipSlomoError):
    pass


class EmptyWindow(PrecipSlomoError):
    pass


class ManifestError(PrecipSlomoError):
    pass


class GridMismatch(PrecipSlomoError):
    pass


class UnitUnknown(PrecipSlomoError):
    pass

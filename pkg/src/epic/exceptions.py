"""Exception types raised across the package."""


class EpicError(Exception):
    """Base class for all errors raised by this package."""


class SequenceTooLong(EpicError, ValueError):
    pass


class UnknownLabel(EpicError, ValueError):
    def __init__(self, label, record_id=None):
        self.label = label
        self.record_id = record_id
        where = f" (record {record_id!r})" if record_id is not None else ""
        super().__init__(f"unknown lineage label {label!r}{where}")


class InvalidSpec(EpicError, ValueError):
    pass


class ShapeMismatch(EpicError, ValueError):
    pass


class EmptyDataset(EpicError, ValueError):
    pass


class IncompatibleShapes(EpicError, ValueError):
    pass


class EmptyContributionList(EpicError, ValueError):
    pass


class NoData(EpicError):
    pass


class EmptyTestSet(EpicError, ValueError):
    pass


class LengthMismatch(EpicError, ValueError):
    pass


class EmptyInput(EpicError, ValueError):
    pass


class SpecInfeasible(EpicError, ValueError):
    pass


class NumericFailure(EpicError, FloatingPointError):
    """Non-finite values appeared in weights or loss during training."""


class ConfigError(EpicError, ValueError):
    pass


class FingerprintMismatch(EpicError, ValueError):
    pass


class CheckpointFormatError(EpicError, ValueError):
    pass

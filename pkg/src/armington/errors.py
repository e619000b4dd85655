"""Exception types shared across the package."""


class ArmingtonError(Exception):
    """Base class for all package errors."""


class MalformedRecordError(ArmingtonError):
    """A transaction record is internally inconsistent (e.g. value without quantity)."""


class MissingDataError(ArmingtonError):
    """Required coverage (tariff, exchange rate, month) is incomplete."""


class EmptyPanelError(ArmingtonError):
    """An operation produced or received a panel with no usable observations."""


class ScheduleError(ArmingtonError):
    """Tariff schedule resolution failed (unmatched or ambiguous entry)."""


class SequencingError(ArmingtonError):
    """Chronological state (quota ledger) was fed out of order."""


class CollinearityError(ArmingtonError):
    """Design matrix is rank deficient; carries the offending column names."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"collinear columns after transformation: {self.columns}")


class WeakInstrumentError(ArmingtonError):
    """First-stage projection is rank deficient or instruments carry no signal."""


class EstimationError(ArmingtonError):
    """Estimation could not be carried out on the given inputs."""

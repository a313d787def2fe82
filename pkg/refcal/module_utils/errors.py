import logging
from typing import Any, Dict, NoReturn


class RefcalException(Exception):
    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


class RefcalWarning(RefcalException):
    """An exception that results in a non-fatal warning."""


class RefcalError(RefcalException):
    """An exception that results in a fatal error."""

    exit_code = 1

    def __init__(self, message: str, **kwargs: Any):
        super().__init__(message)
        self.kwargs: Dict[str, Any] = dict(kwargs)

    def fail(self, logger: logging.Logger) -> NoReturn:
        logger.error(self.message)
        raise SystemExit(self.exit_code)


# exit code families used by the command layer


class UsageError(RefcalError):
    exit_code = 2


class InputError(RefcalError):
    exit_code = 3


class TrainingError(RefcalError):
    exit_code = 4


class VerificationFailure(RefcalError):
    exit_code = 1


class ConfigInvalid(UsageError):
    pass


# embeddings


class ZeroVector(InputError):
    pass


class NotUnitNorm(InputError):
    pass


class ShapeMismatch(InputError):
    pass


# losses


class EmptyPositiveSet(TrainingError):
    def __init__(self, anchor: int, **kwargs: Any):
        super().__init__("Anchor {0} has an empty positive set.".format(anchor), anchor=anchor, **kwargs)
        self.anchor = anchor


class EmptyNegativeSet(TrainingError):
    def __init__(self, anchor: int, **kwargs: Any):
        super().__init__("Anchor {0} has an empty negative set.".format(anchor), anchor=anchor, **kwargs)
        self.anchor = anchor


class NonPositiveTemperature(TrainingError):
    pass


class LabelOutOfRange(TrainingError):
    pass


class EpsilonOutOfRange(ConfigInvalid):
    pass


class NegativeGamma(ConfigInvalid):
    pass


class BoundViolation(VerificationFailure):
    def __init__(self, message: str, report: Any):
        super().__init__(message, report=report)
        self.report = report


# metrics


class EmptyBatch(InputError):
    pass


class TooFewSamples(InputError):
    pass


class NonPositiveBandwidth(UsageError):
    pass


class EmptyScores(InputError):
    pass


class NotStochastic(InputError):
    pass


class DegenerateSplit(RefcalWarning):
    """All predictions are correct, or all are incorrect."""


# network


class EmptyValidation(InputError):
    pass


class CheckpointFormatError(InputError):
    pass


# datagen


class InvalidImbalance(UsageError):
    pass


class IncompleteMap(UsageError):
    pass


class EmptyGroup(UsageError):
    pass


class SeverityOutOfRange(UsageError):
    pass


class DatasetFormatError(InputError):
    pass


# pipeline


class EmptySplit(InputError):
    pass


class RowNotStochastic(InputError):
    pass


class RowArgmaxMismatch(RefcalError):
    exit_code = 4


class PredictionFormatError(InputError):
    pass

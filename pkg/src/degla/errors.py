"""Exception hierarchy shared by every module.

Names mirror the failure they describe; all derive from ``DeglaError`` so
callers (notably the CLI) can map them onto exit codes in one place.
"""


class DeglaError(Exception):
    pass


# numerics
class DegenerateNorm(DeglaError, ValueError):
    pass


class ShapeMismatch(DeglaError, ValueError):
    pass


class InvalidTemperature(DeglaError, ValueError):
    pass


class NonFiniteFunction(DeglaError, ArithmeticError):
    pass


# encoders
class OutOfVocab(DeglaError, ValueError):
    pass


class EmptySequence(DeglaError, ValueError):
    pass


class CheckpointError(DeglaError):
    pass


# losses
class MissingNegatives(DeglaError, ValueError):
    pass


class MissingTeacher(DeglaError, ValueError):
    pass


# negcap
class EmptyText(DeglaError, ValueError):
    pass


class TooShort(DeglaError, ValueError):
    pass


class InsufficientNouns(DeglaError, ValueError):
    pass


class InsufficientAdjectives(DeglaError, ValueError):
    pass


class NoReplaceableAdjective(DeglaError, ValueError):
    pass


class NoReplaceableNoun(DeglaError, ValueError):
    pass


class ClientUnavailable(DeglaError):
    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class MalformedResponse(DeglaError, ValueError):
    pass


class AllRejected(DeglaError, ValueError):
    pass


class CaptionUnusable(DeglaError, ValueError):
    pass


# trainer
class NonFiniteLoss(DeglaError, ArithmeticError):
    def __init__(self, message: str, batch_id=None):
        super().__init__(message)
        self.batch_id = batch_id


class DatasetInvalid(DeglaError, ValueError):
    pass


# evaluation
class KTooLarge(DeglaError, ValueError):
    pass


# dataio
class SchemaError(DatasetInvalid):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InconsistentFeatureDim(DatasetInvalid):
    pass


class VocabTooSmall(DeglaError, ValueError):
    pass

"""Exception hierarchy.

Validation problems (bad records, bad config) derive from ``ValidationError``
so the CLI can map them to exit code 2; numeric blow-ups raise
``DivergenceFault`` (exit code 4).
"""


class MonoHeightError(Exception):
    """Base class for all package errors."""


class ValidationError(MonoHeightError, ValueError):
    """A record or argument violates a documented invariant."""

    invariant = "validation"


class HeightOutOfRange(ValidationError):
    invariant = "height_cm in [100, 250]"


class DescriptorDimMismatch(ValidationError):
    invariant = "descriptor dimension equals d_face"


class AmbiguousUnit(ValidationError):
    invariant = "height text has an unambiguous unit"


class EmptyInput(ValidationError):
    invariant = "non-empty input"


class UnknownSubject(ValidationError):
    invariant = "candidate subject ids resolve against the subject store"


class OracleTooLarge(ValidationError):
    invariant = "oracle input at most 8x8"


class DegenerateCrop(ValidationError):
    invariant = "crop has positive area and >= 2 visible joints"


class ZeroScale(ValidationError):
    invariant = "visible joints are not all coincident"


class DuplicateExample(ValidationError):
    invariant = "(image_id, subject_id) unique"


class ShapeError(ValidationError):
    invariant = "operand shapes agree"


class EmptyBatch(ValidationError):
    invariant = "batch size >= 1"


class LabelError(ValidationError):
    invariant = "labels are binary"


class SingularSystem(ValidationError):
    invariant = "normal equations are non-singular"


class SpecError(ValidationError):
    invariant = "configuration is well-formed"


class StreamInputMissing(ValidationError):
    invariant = "every configured stream has an input"


class InsufficientLabels(ValidationError):
    invariant = "training rows carry the required labels"


class TooSmall(ValidationError):
    invariant = "at least one example per split"


class ConfigHashMismatch(ValidationError):
    invariant = "inputs were produced under the same config hash"


class DivergenceFault(MonoHeightError, FloatingPointError):
    """A non-finite activation, gradient or loss was produced."""

    def __init__(self, message, step=None, epoch=None):
        self.step = step
        self.epoch = epoch
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class InputMissing(ValidationError):
    invariant = "input files exist"


class StageFailure(MonoHeightError):
    """A pipeline stage raised; ``cause`` holds the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")

"""Exception hierarchy shared by all railar modules.

Two families matter for the CLI exit codes: ``ValidationError`` covers bad
inputs, files, and schemas (exit code 2), ``ProcessingError`` covers failures
that happen while crunching valid inputs (exit code 3).
"""


class RailarError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RailarError):
    """Invalid input data, file, schema, or parameter."""


class ProcessingError(RailarError):
    """A computation failed on otherwise valid inputs."""


# --- ingest / IO ---

class MissingFile(ValidationError):
    pass


class SchemaViolation(ValidationError):
    pass


class NonMonotoneTimestamps(ValidationError):
    pass


class MalformedPly(ValidationError):
    pass


class UnsupportedProperty(ValidationError):
    pass


class OutOfBoundsAnnotation(ValidationError):
    pass


class MeshLoadError(ValidationError):
    pass


# --- geometry / numerics ---

class PointBehindCamera(ProcessingError):
    pass


class DegenerateInput(ProcessingError):
    pass


class SizeMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class InsufficientTrackPoints(ProcessingError):
    pass


class ArclengthOutOfRange(ValidationError):
    pass


# --- localization ---

class TooFewPoints(ProcessingError):
    pass


class IcpDiverged(ProcessingError):
    pass


class EmptyCenterline(ValidationError):
    pass


# --- compositing ---

class EmptyInput(ValidationError):
    pass


class EmptyMask(ValidationError):
    pass


class NonPositiveDistance(ValidationError):
    pass


# --- evaluation ---

class NoAnnotationAtFrame(ValidationError):
    pass


class NoVisiblePoints(ProcessingError):
    pass


class TooShort(ValidationError):
    pass


class TooFewAnnotations(ValidationError):
    pass


class CalibrationPointNotVisible(ProcessingError):
    pass

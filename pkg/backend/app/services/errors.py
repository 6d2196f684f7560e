from __future__ import annotations

from typing import Optional


class SarNarratorError(Exception):
    """Base class for every error raised by the pipeline."""


class ConfigError(SarNarratorError):
    pass


# ---- ingest ----

class ParseError(SarNarratorError):
    def __init__(self, message: str, path: Optional[str] = None):
        self.path = str(path) if path is not None else None
        super().__init__(f"{self.path}: {message}" if self.path else message)


class MalformedDocument(ParseError):
    pass


class DanglingReference(ParseError):
    pass


class InvalidBox(ParseError, ValueError):
    pass


class ImageError(SarNarratorError):
    def __init__(self, message: str, path: Optional[str] = None):
        self.path = str(path) if path is not None else None
        super().__init__(f"{self.path}: {message}" if self.path else message)


class UnreadableImage(ImageError):
    pass


class EmptyImage(ImageError):
    pass


class TooSmall(ImageError):
    pass


# ---- dedup ----

class HashingError(SarNarratorError):
    def __init__(self, sample_id: str, cause: Exception):
        self.sample_id = sample_id
        self.cause = cause
        super().__init__(f"sample {sample_id}: {cause}")


# ---- rewrite ----

class InsufficientExamples(SarNarratorError, ValueError):
    pass


class EndpointError(SarNarratorError):
    def __init__(self, message: str, attempts: int = 0):
        self.attempts = attempts
        super().__init__(message)


class CassetteMiss(EndpointError):
    pass


class EmptyCompletion(SarNarratorError):
    pass


# ---- corpus ----

class DuplicateId(SarNarratorError, ValueError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"duplicate record id: {record_id}")


class EmptyManifest(SarNarratorError, ValueError):
    pass


class DegenerateSplit(SarNarratorError, ValueError):
    pass


# ---- eval ----

class NoReferences(SarNarratorError, ValueError):
    pass


class AlignmentMismatch(SarNarratorError, ValueError):
    pass


class KOutOfRange(SarNarratorError, ValueError):
    pass


class MatrixFormatError(ParseError):
    pass


# ---- cli ----

class StageError(SarNarratorError):
    def __init__(self, stage: str, exit_code: int, cause: Exception):
        self.stage = stage
        self.exit_code = exit_code
        self.cause = cause
        super().__init__(f"stage {stage} failed: {cause}")

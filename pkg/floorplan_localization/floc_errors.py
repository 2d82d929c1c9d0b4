"""
floc_errors.py - exception hierarchy
====================================
Each error names its kind; the CLI turns the kind into the error JSON.
"""


class FLocError(Exception):
    kind = "floc-error"


class FloorplanFormatError(FLocError):
    kind = "format-error"


class ValidationError(FLocError):
    kind = "validation-error"


class OccupiedOriginError(FLocError):
    kind = "occupied-origin"


class OutOfBoundsError(FLocError):
    kind = "out-of-bounds"


class EmptyDomainError(FLocError):
    kind = "empty-domain"


class MiningExhaustedError(FLocError):
    kind = "mining-exhausted"


class ConfigurationError(FLocError):
    kind = "configuration-error"


class TrainingFailureError(FLocError):
    kind = "training-failure"

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class DegenerateEmbeddingError(FLocError):
    kind = "degenerate-embedding"


class MissingInputError(FLocError):
    kind = "missing-input"

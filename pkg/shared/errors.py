"""
Exception hierarchy for the mode connectivity lab
Each error also derives from the closest builtin so callers may catch either
"""
from typing import Any, Optional


class MConnError(Exception):
    """Root of all lab errors"""


class ShapeMismatchError(MConnError, ValueError):
    """Tensor or layer shapes do not compose"""


class LayoutMismatchError(MConnError, ValueError):
    """Weight vectors or curves built for different model specs"""


class NonFiniteError(MConnError, ArithmeticError):
    """NaN or Inf produced by a forward/backward pass"""


class DivergenceError(NonFiniteError):
    """Training loss became non-finite"""


class CurveDomainError(MConnError, ValueError):
    """Curve index t outside [0, 1]"""


class DatasetFormatError(MConnError, ValueError):
    """Malformed IDX or dataset archive"""


class PoisoningError(MConnError, ValueError):
    """Invalid poisoning rule, trigger or fraction"""


class ProvenanceError(MConnError, ValueError):
    """Evaluation data overlaps the data used to build a model"""


class MetricMissingError(MConnError, KeyError):
    """Requested metric absent from a path profile"""


class CheckpointFormatError(MConnError, ValueError):
    """Checkpoint magic, version or payload is invalid"""


class ConfigError(MConnError, ValueError):
    """Scenario or CLI configuration is inconsistent"""


class InjectionFailure(MConnError):
    """Error injection did not reach full target success"""

    def __init__(self, message: str, result: Optional[Any] = None):
        super().__init__(message)
        self.result = result


class StageFailure(MConnError):
    """A scenario stage failed; carries the stage name"""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


class SimilarityUndefinedError(MConnError, ArithmeticError):
    """Every sample has a zero input gradient, so no cosine is defined"""

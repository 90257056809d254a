"""
Error hierarchy for the SUR prediction toolkit.

Three families, each with the exit code the CLI uses:
  ConfigurationError  – bad parameters, missing paths, impossible plans   (2)
  DataError           – unreadable / incomplete / inconsistent inputs     (3)
  NumericError        – non-finite numbers, broken numeric contracts      (4)
"""

from typing import Iterable, List, Optional


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class SurPredictError(Exception):
    """Base class.  `exit_code` is what sur_predict.py returns for it."""

    exit_code = 1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
class ConfigurationError(SurPredictError):
    exit_code = EXIT_CONFIG


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------
class DataError(SurPredictError):
    exit_code = EXIT_DATA


class FormatError(DataError):
    """Stream or file does not follow its grammar (Y4M header, CSV schema)."""


class UnsupportedFormatError(DataError):
    """Well-formed but outside what v1 decodes (chroma layout, bit depth)."""


class TruncationError(DataError):
    """Stream ended inside a frame, or held no frame at all."""


class BoundsError(DataError, IndexError):
    pass


class ShapeError(DataError, ValueError):
    pass


class MissingScoreError(DataError):
    pass


class IncompleteTableError(DataError):
    def __init__(self, message: str, gaps: Optional[List] = None):
        super().__init__(message)
        self.gaps = list(gaps or [])


class ScoreRangeError(DataError):
    pass


class MissingDataError(DataError):
    def __init__(self, message: str, missing: Optional[Iterable] = None):
        super().__init__(message)
        self.missing = list(missing or [])


class EmptyInputError(DataError, ValueError):
    pass


class DegenerateSampleError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class CorruptModelError(DataError):
    pass


class ModelVersionError(DataError):
    pass


# ---------------------------------------------------------------------------
# numeric
# ---------------------------------------------------------------------------
class NumericError(SurPredictError):
    exit_code = EXIT_NUMERIC


class NonFiniteError(NumericError, ValueError):
    pass


class ContractError(NumericError):
    """A curve handed to jnd_point is not non-increasing."""


# ---------------------------------------------------------------------------
# batch failures
# ---------------------------------------------------------------------------
class SegmentScoreError(DataError):
    """Wraps a score failure with the SegmentIndex it happened at."""

    def __init__(self, segment, cause: Exception):
        super().__init__(f"segment (w={segment.w}, h={segment.h}, t={segment.t}): {cause}")
        self.segment = segment
        self.cause = cause


class ItemFailure:
    """One failed item in a batch run (source/qp pair, file, ...)."""

    def __init__(self, item: str, error: Exception):
        self.item = item
        self.error = error

    def __str__(self):
        return f"{self.item}: {self.error}"


class BatchError(SurPredictError):
    """Raised once at the end of a batch that collected ItemFailures.

    Takes the exit code of the first failure so a single bad clip still
    reports as a data problem.
    """

    def __init__(self, what: str, failures: List[ItemFailure]):
        lines = "\n".join(f"  - {f}" for f in failures)
        super().__init__(f"{what}: {len(failures)} item(s) failed\n{lines}")
        self.failures = failures
        first = failures[0].error if failures else None
        self.exit_code = getattr(first, "exit_code", EXIT_DATA)

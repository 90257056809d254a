"""
Satisfied-user-ratio model.

Each subject's first JND point on the qp axis is treated as a sample of
X ~ N(mean, std^2).  The SUR of coded clip i is the share of subjects who
do not notice it:

    empirical   S_i = 1 - (#subjects noticing d_i) / M
    gaussian    S_i = Q((i - mean) / std)

The JND location of a curve is where it crosses the threshold (0.75 by
default), interpolated linearly between grid points.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erfc, erfcinv
from sklearn.isotonic import isotonic_regression

from errors import (ConfigurationError, ContractError, DegenerateSampleError,
                    FormatError, NonFiniteError, ShapeError)

DEFAULT_THRESHOLD = 0.75
DEFAULT_QP_GRID = tuple(range(1, 52))
MIN_QP, MAX_QP = 1, 51
BEYOND_GRID = math.inf
MONOTONE_TOL = 1e-12

Number = Union[float, np.ndarray]


class Provenance(str, Enum):
    EMPIRICAL = "empirical"
    GAUSSIAN = "gaussian"
    PREDICTED = "predicted"


@dataclass(frozen=True)
class JndAnnotationSet:
    """First-JND qp of every subject for one source.

    `noticed` optionally holds raw (subject_id, qp) -> flag observations; when
    absent, a subject notices d_i iff their JND point is <= i.
    """

    source_id: str
    jnd_qps: Tuple[int, ...]
    subject_ids: Tuple[str, ...] = ()
    noticed: Optional[Mapping[Tuple[str, int], bool]] = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.jnd_qps) < 1:
            raise FormatError(f"{self.source_id}: no JND annotations")
        bad = [q for q in self.jnd_qps if not MIN_QP <= q <= MAX_QP]
        if bad:
            raise FormatError(f"{self.source_id}: JND qp values outside 1..51: {bad}")
        if self.subject_ids and len(self.subject_ids) != len(self.jnd_qps):
            raise FormatError(f"{self.source_id}: {len(self.subject_ids)} subject ids for "
                              f"{len(self.jnd_qps)} JND values")

    @property
    def subjects(self) -> int:
        return len(self.jnd_qps)


@dataclass(frozen=True)
class GaussianJndModel:
    mean: float
    std: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.std)):
            raise NonFiniteError(f"Gaussian model with non-finite parameters ({self.mean}, {self.std})")
        if self.std <= 0:
            raise DegenerateSampleError(f"Gaussian model needs std > 0, got {self.std}")


@dataclass(frozen=True)
class SurCurve:
    qps: np.ndarray
    values: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        qps = np.asarray(self.qps)
        values = np.asarray(self.values, dtype=np.float64)
        if qps.shape != values.shape or qps.ndim != 1 or qps.size == 0:
            raise ShapeError(f"qp grid {qps.shape} and SUR values {values.shape} do not line up")
        if np.any(np.diff(qps) <= 0):
            raise ShapeError("qp grid must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("SUR values contain NaN or infinity")
        if np.any(values < 0) or np.any(values > 1):
            raise ContractError("SUR values must lie in [0, 1]")
        object.__setattr__(self, "qps", qps)
        object.__setattr__(self, "values", values)
        if self.provenance is not Provenance.EMPIRICAL and not self.is_monotone:
            raise ContractError(f"{self.provenance.value} SUR curve is not non-increasing")

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.values) <= MONOTONE_TOL))

    def at(self, qp: int) -> float:
        hits = np.flatnonzero(self.qps == qp)
        if hits.size == 0:
            raise ShapeError(f"qp {qp} not on the curve grid")
        return float(self.values[hits[0]])


# ---------------------------------------------------------------------------
# normal-distribution helpers
# ---------------------------------------------------------------------------
def q_function(z: Number) -> Number:
    """Upper tail of the standard normal."""
    return 0.5 * erfc(np.asarray(z, dtype=np.float64) / math.sqrt(2.0))


def q_inverse(p: Number) -> Number:
    return math.sqrt(2.0) * erfcinv(2.0 * np.asarray(p, dtype=np.float64))


def fit_gaussian(annotations: JndAnnotationSet) -> GaussianJndModel:
    samples = np.asarray(annotations.jnd_qps, dtype=np.float64)
    if samples.size < 2:
        raise DegenerateSampleError(f"{annotations.source_id}: need at least two subjects, "
                                    f"got {samples.size}")
    std = samples.std(ddof=1)
    if std == 0:
        raise DegenerateSampleError(f"{annotations.source_id}: all {samples.size} JND samples "
                                    f"equal {samples[0]:g}")
    return GaussianJndModel(float(samples.mean()), float(std))


def empirical_sur(annotations: JndAnnotationSet, i: int) -> float:
    flags = annotations.noticed
    if flags is not None and annotations.subject_ids:
        observed = [flags.get((s, i)) for s in annotations.subject_ids]
        if all(f is not None for f in observed):
            return 1.0 - sum(bool(f) for f in observed) / annotations.subjects
    noticing = sum(1 for q in annotations.jnd_qps if q <= i)
    return 1.0 - noticing / annotations.subjects


def gaussian_sur(model: GaussianJndModel, i: Number) -> Number:
    out = q_function((np.asarray(i, dtype=np.float64) - model.mean) / model.std)
    return float(out) if np.ndim(out) == 0 else out


def analytic_jnd(model: GaussianJndModel, threshold: float = DEFAULT_THRESHOLD) -> float:
    """qp where the Gaussian SUR equals `threshold`, without a grid."""
    return float(model.mean + model.std * q_inverse(threshold))


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------
def gaussian_curve(model: GaussianJndModel, qps: Sequence[int] = DEFAULT_QP_GRID) -> SurCurve:
    qps = np.asarray(qps)
    return SurCurve(qps, np.atleast_1d(gaussian_sur(model, qps)), Provenance.GAUSSIAN)


def empirical_curve(annotations: JndAnnotationSet, qps: Sequence[int] = DEFAULT_QP_GRID) -> SurCurve:
    return SurCurve(np.asarray(qps), np.array([empirical_sur(annotations, int(q)) for q in qps]),
                    Provenance.EMPIRICAL)


def monotone_project(values: Sequence[float], qps: Optional[Sequence[int]] = None) -> SurCurve:
    """Least-squares closest non-increasing sequence, clamped to [0, 1]."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ShapeError("monotone_project needs a non-empty 1-D sequence")
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("cannot project NaN or infinite SUR values")
    qps = np.arange(1, values.size + 1) if qps is None else np.asarray(qps)
    projected = np.asarray(isotonic_regression(values, increasing=False), dtype=np.float64)
    return SurCurve(qps, np.clip(projected, 0.0, 1.0), Provenance.PREDICTED)


def jnd_point(curve: SurCurve, threshold: float = DEFAULT_THRESHOLD) -> float:
    """First qp where the curve falls to `threshold`; BEYOND_GRID if it never does."""
    if not 0 < threshold < 1:
        raise ConfigurationError(f"threshold must be in (0, 1), got {threshold}")
    if not curve.is_monotone:
        raise ContractError(f"{curve.provenance.value} curve is not non-increasing; "
                            f"project it before extracting a JND point")
    v, q = curve.values, curve.qps.astype(np.float64)
    below = np.flatnonzero(v <= threshold)
    if below.size == 0:
        return BEYOND_GRID
    j = int(below[0])
    if j == 0:
        return float(q[0])
    v0, v1 = v[j - 1], v[j]
    return float(q[j - 1] + (v0 - threshold) / (v0 - v1) * (q[j] - q[j - 1]))

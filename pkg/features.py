"""
40-D feature vector per (source, qp).

    x = degradation CDF (20)  ||  masking histograms (20)

Degradation part, per coded clip d_i:
  - slope of every segment between qp i-k and qp i:  (V(i-k) - V(i)) / k
  - keep the ceil(p * N) segments with the largest slope (all of them when i < k)
  - dV = V(reference) - V(d_i) on the kept segments
  - f[n-1] = share of dV <= 2n, n = 1..20

The masking part comes from the reference clip alone (masking.py) and is
shared by every qp of a source.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from errors import (ConfigurationError, EmptyInputError, MissingDataError,
                    NonFiniteError, ShapeError)
from masking import MaskingFeature, masking_feature
from media_io import Clip
from quality_index import MAX_SCORE, ExternalMetric, QualityMetric, make_metric, score_all
from segmenter import SegmentIndex, SegmentLayout

log = logging.getLogger(__name__)

DEFAULT_K = 2
DEFAULT_P = 0.80
DEGRADATION_BINS = 20
DEGRADATION_STEP = 2.0
FEATURE_DIM = 40
# bump when extraction changes so cached vectors go stale
FEATURE_REVISION = 2


@dataclass(frozen=True)
class SlopeParams:
    k: int = DEFAULT_K
    p: float = DEFAULT_P

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ConfigurationError(f"slope stride k must be an integer >= 1, got {self.k}")
        if not 0 < self.p <= 1:
            raise ConfigurationError(f"selection fraction p must be in (0, 1], got {self.p}")


@dataclass(frozen=True)
class DegradationFeature:
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (DEGRADATION_BINS,):
            raise ShapeError(f"degradation feature must have {DEGRADATION_BINS} entries")


@dataclass(frozen=True)
class FeatureVector:
    x: np.ndarray
    source_id: str
    qp: int

    def __post_init__(self):
        if self.x.shape != (FEATURE_DIM,):
            raise ShapeError(f"feature vector must have {FEATURE_DIM} entries, got {self.x.shape}")


# ---------------------------------------------------------------------------
# significant segments
# ---------------------------------------------------------------------------
ScoresByQp = Mapping[int, np.ndarray]


def _scores(scores_at_qp: ScoresByQp, qp: int) -> np.ndarray:
    if qp not in scores_at_qp:
        raise MissingDataError(f"no scores at qp {qp}", missing=[qp])
    return np.asarray(scores_at_qp[qp], dtype=np.float64)


def slope(scores_at_qp: ScoresByQp, segment: SegmentIndex, i: int,
          params: SlopeParams = SlopeParams()) -> float:
    if i - params.k < 0:
        raise MissingDataError(f"qp {i} has no neighbour at qp {i - params.k}", missing=[i - params.k])
    lower = _scores(scores_at_qp, i - params.k)[segment.t, segment.h, segment.w]
    upper = _scores(scores_at_qp, i)[segment.t, segment.h, segment.w]
    return float((lower - upper) / params.k)


def slopes_at(scores_at_qp: ScoresByQp, i: int, params: SlopeParams = SlopeParams()) -> np.ndarray:
    """Slope of every segment at qp i, same shape as the score arrays."""
    if i - params.k < 0:
        raise MissingDataError(f"qp {i} has no neighbour at qp {i - params.k}", missing=[i - params.k])
    return (_scores(scores_at_qp, i - params.k) - _scores(scores_at_qp, i)) / params.k


def selection_count(n: int, p: float) -> int:
    # round first so p * n landing a hair above an integer does not add one
    return max(1, math.ceil(round(p * n, 9)))


def significant_mask(slopes: np.ndarray, p: float) -> np.ndarray:
    """Boolean mask of the ceil(p*N) largest slopes; ties keep the earlier (t, h, w)."""
    slopes = np.asarray(slopes, dtype=np.float64)
    if slopes.size == 0:
        raise EmptyInputError("no slopes to select from")
    if not np.all(np.isfinite(slopes)):
        raise NonFiniteError("slopes contain NaN or infinity")
    flat = slopes.ravel()
    order = np.argsort(-flat, kind="stable")
    mask = np.zeros(flat.shape, dtype=bool)
    mask[order[:selection_count(flat.size, p)]] = True
    return mask.reshape(slopes.shape)


def select_significant(slopes: np.ndarray, p: float) -> List[SegmentIndex]:
    """Selected segments in (t, h, w) order.  `slopes` is shaped (windows, rows, cols)."""
    mask = significant_mask(slopes, p)
    if mask.ndim != 3:
        mask = mask.reshape(1, 1, -1)
    return [SegmentIndex(int(w), int(h), int(t)) for t, h, w in np.argwhere(mask)]


# ---------------------------------------------------------------------------
# degradation CDF
# ---------------------------------------------------------------------------
THRESHOLDS = DEGRADATION_STEP * np.arange(1, DEGRADATION_BINS + 1)


def degradation_feature(deltas: Sequence[float]) -> DegradationFeature:
    deltas = np.asarray(deltas, dtype=np.float64).ravel()
    if deltas.size == 0:
        raise EmptyInputError("no quality deltas for the degradation feature")
    counts = np.count_nonzero(deltas[np.newaxis, :] <= THRESHOLDS[:, np.newaxis], axis=1)
    return DegradationFeature(counts / deltas.size)


def assemble(deg: DegradationFeature, mask: MaskingFeature, source_id: str, qp: int) -> FeatureVector:
    return FeatureVector(np.concatenate([deg.values, mask.values]), source_id, int(qp))


def degradation_at(scores_at_qp: ScoresByQp, reference_scores: np.ndarray, i: int,
                   params: SlopeParams = SlopeParams()) -> DegradationFeature:
    """Degradation feature of coded clip i from per-qp score arrays."""
    current = _scores(scores_at_qp, i)
    if i < params.k:
        keep = np.ones(current.shape, dtype=bool)
    else:
        keep = significant_mask(slopes_at(scores_at_qp, i, params), params.p)
    return degradation_feature((reference_scores - current)[keep])


# ---------------------------------------------------------------------------
# per-source extraction
# ---------------------------------------------------------------------------
CodedSource = Union[Mapping[int, Clip], Callable[[int], Clip]]


def score_grid(metric: QualityMetric, reference: Clip, coded: Optional[CodedSource],
               qps: Sequence[int], layout: SegmentLayout, source_id: str,
               n_jobs: int = 1) -> Tuple[Dict[int, np.ndarray], np.ndarray]:
    """Score arrays per qp plus the reference-side scores V(S^r).

    qp 0 always maps to the reference scores.  With an external metric the
    arrays come straight from the score table and coded clips are optional.
    """
    ref_scores = np.full(layout.shape, MAX_SCORE)
    if isinstance(metric, ExternalMetric):
        from_table = metric.reference_scores(source_id, layout)
        if from_table is not None:
            ref_scores = from_table
        scores = {qp: metric.table.array(source_id, qp, layout) for qp in qps if qp != 0}
    else:
        if coded is None:
            raise MissingDataError(f"{source_id}: coded clips are required for built-in metrics")
        get = coded.__getitem__ if isinstance(coded, Mapping) else coded
        scores = {}
        for qp in qps:
            if qp == 0:
                continue
            try:
                clip = get(qp)
            except KeyError:
                raise MissingDataError(f"{source_id}: no coded clip at qp {qp}", missing=[qp]) from None
            scores[qp] = score_all(metric, reference, clip, layout, n_jobs=n_jobs)
    scores[0] = ref_scores
    return scores, ref_scores


def extract_source_features(reference: Clip, coded: Optional[CodedSource], qps: Sequence[int],
                            layout: SegmentLayout, metric: Union[str, QualityMetric] = "psnr_mapped",
                            params: SlopeParams = SlopeParams(), source_id: Optional[str] = None,
                            n_jobs: int = 1) -> List[FeatureVector]:
    """One FeatureVector per qp in `qps` for a single source."""
    source_id = source_id or reference.name
    if not isinstance(metric, QualityMetric):
        metric = make_metric(metric)
    qps = sorted(int(q) for q in qps)

    missing = [q - params.k for q in qps if q - params.k >= 0 and q - params.k not in qps
               and q - params.k != 0]
    if missing:
        raise MissingDataError(f"{source_id}: slope neighbours missing from the qp grid: {missing}",
                               missing=missing)

    mask = masking_feature(reference, layout, n_jobs=n_jobs)
    scores, ref_scores = score_grid(metric, reference, coded, qps, layout, source_id, n_jobs)

    out = []
    for qp in qps:
        deg = degradation_at(scores, ref_scores, qp, params)
        out.append(assemble(deg, mask, source_id, qp))
    log.info("%s: %d feature vectors", source_id, len(out))
    return out

"""
Local quality indices on a 0-100 scale.

Two built-in full-reference metrics work on luma only and average per-frame
scores over a segment's frames:

  psnr_mapped  min(100, 100 * PSNR / 60); identical frames score 100
  struct_sim   mean structural similarity over 8x8 windows, x 100

`external` reads scores produced elsewhere (real VMAF runs, for instance)
from a ScoreTable CSV:

    clip_id,qp,w,h,t,score
    bigbuck_720,10,0,0,0,97.31
    ...

Rows with qp=0 hold reference-side scores V(S^r) when the producer has them.
"""

import csv
import logging
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.ndimage import uniform_filter

from errors import (ConfigurationError, FormatError, IncompleteTableError,
                    MissingScoreError, ScoreRangeError, SegmentScoreError,
                    ShapeError)
from media_io import Clip, check_aligned
from segmenter import SegmentIndex, SegmentLayout, SegmentView, extract

log = logging.getLogger(__name__)

MAX_SCORE = 100.0
LOSSLESS_PSNR_DB = 60.0
SSIM_WINDOW = 8
SSIM_K1, SSIM_K2 = 0.01, 0.03

SCORE_TABLE_HEADER = ["clip_id", "qp", "w", "h", "t", "score"]


class MetricId(str, Enum):
    PSNR_MAPPED = "psnr_mapped"
    STRUCT_SIM = "struct_sim"
    EXTERNAL = "external"

    @classmethod
    def parse(cls, text: str) -> "MetricId":
        try:
            return cls(text)
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ConfigurationError(f"unknown metric {text!r} (choose from {choices})") from None


@dataclass(frozen=True)
class QualityScore:
    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= MAX_SCORE:
            raise ScoreRangeError(f"quality score {self.value} outside [0, 100]")

    def __float__(self):
        return float(self.value)


# ---------------------------------------------------------------------------
# score table
# ---------------------------------------------------------------------------
TableKey = Tuple[str, int, SegmentIndex]


class ScoreTable:
    """Immutable (clip_id, qp, SegmentIndex) -> score lookup."""

    def __init__(self, entries: Mapping[TableKey, float]):
        self._entries = MappingProxyType(dict(entries))

    def __len__(self):
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def get(self, clip_id: str, qp: int, index: SegmentIndex) -> float:
        try:
            return self._entries[(clip_id, int(qp), SegmentIndex(*index))]
        except KeyError:
            raise MissingScoreError(
                f"no score for clip {clip_id!r} qp={qp} segment "
                f"(w={index.w}, h={index.h}, t={index.t})") from None

    def pairs(self) -> List[Tuple[str, int]]:
        """Sorted distinct (clip_id, qp) pairs present in the table."""
        return sorted({(c, q) for c, q, _ in self._entries})

    def has_pair(self, clip_id: str, qp: int) -> bool:
        return (clip_id, int(qp)) in set(self.pairs())

    def array(self, clip_id: str, qp: int, layout: SegmentLayout) -> np.ndarray:
        out = np.empty(layout.shape, dtype=np.float64)
        for index in layout.indices():
            out[index.t, index.h, index.w] = self.get(clip_id, qp, index)
        return out

    def gaps(self, layout: SegmentLayout) -> List[TableKey]:
        missing = []
        for clip_id, qp in self.pairs():
            for index in layout.indices():
                if (clip_id, qp, index) not in self._entries:
                    missing.append((clip_id, qp, index))
        return missing


def _parse_row(row: Dict[str, str], line_no: int) -> Tuple[TableKey, float]:
    try:
        key = (row["clip_id"].strip(), int(row["qp"]),
               SegmentIndex(int(row["w"]), int(row["h"]), int(row["t"])))
        value = float(row["score"])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"score table line {line_no}: {exc}") from None
    if not 0 <= key[1] <= 51:
        raise FormatError(f"score table line {line_no}: qp {key[1]} outside 0..51")
    if not (np.isfinite(value) and 0.0 <= value <= MAX_SCORE):
        raise ScoreRangeError(f"score table line {line_no}: score {row['score']} outside [0, 100]")
    return key, value


def load_score_table(path: str, layout: Optional[SegmentLayout] = None) -> ScoreTable:
    """Read and validate a ScoreTable CSV.

    With a layout, every listed (clip_id, qp) pair must cover the whole grid;
    gaps are reported all at once.
    """
    entries: Dict[TableKey, float] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != SCORE_TABLE_HEADER:
            raise FormatError(f"{path}: header must be {','.join(SCORE_TABLE_HEADER)}, "
                              f"got {reader.fieldnames}")
        for line_no, row in enumerate(reader, start=2):
            key, value = _parse_row(row, line_no)
            if key in entries:
                raise FormatError(f"{path} line {line_no}: duplicate row for {key}")
            entries[key] = value

    table = ScoreTable(entries)
    if layout is not None:
        missing = table.gaps(layout)
        if missing:
            shown = ", ".join(f"{c}@qp{q}(w={i.w},h={i.h},t={i.t})" for c, q, i in missing[:10])
            more = f" and {len(missing) - 10} more" if len(missing) > 10 else ""
            raise IncompleteTableError(f"{path}: {len(missing)} missing row(s): {shown}{more}",
                                       gaps=missing)
    log.info("loaded %d scores for %d (clip, qp) pairs from %s",
             len(table), len(table.pairs()), path)
    return table


def write_score_table(rows: Iterable[Tuple[str, int, SegmentIndex, float]], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SCORE_TABLE_HEADER)
        for clip_id, qp, index, value in rows:
            writer.writerow([clip_id, qp, index.w, index.h, index.t, repr(float(value))])


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------
class QualityMetric:
    """Base class.  Subclasses implement `frame_scores` on (frames, H, W) luma."""

    metric_id: MetricId = None

    def __init__(self, bits: int = 8):
        self.bits = bits
        self.max_val = (1 << bits) - 1

    def name(self) -> str:
        return self.metric_id.value

    def frame_scores(self, ref: np.ndarray, dist: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def calc(self, ref: SegmentView, dist: SegmentView) -> float:
        a, b = ref.luma(), dist.luma()
        if a.shape != b.shape:
            raise ShapeError(f"segment shapes differ: {a.shape} vs {b.shape}")
        if np.array_equal(a, b):
            return MAX_SCORE
        return float(np.mean(self.frame_scores(a.astype(np.float64), b.astype(np.float64))))


class PsnrMapped(QualityMetric):
    metric_id = MetricId.PSNR_MAPPED

    def frame_scores(self, ref, dist):
        mse = np.mean((ref - dist) ** 2, axis=(1, 2))
        out = np.full(mse.shape, MAX_SCORE)
        lossy = mse > 0
        psnr = 10.0 * np.log10(self.max_val ** 2 / mse[lossy])
        out[lossy] = np.clip(MAX_SCORE * psnr / LOSSLESS_PSNR_DB, 0.0, MAX_SCORE)
        return out


class StructSim(QualityMetric):
    metric_id = MetricId.STRUCT_SIM

    def frame_scores(self, ref, dist):
        c1 = (SSIM_K1 * self.max_val) ** 2
        c2 = (SSIM_K2 * self.max_val) ** 2
        size = (1, SSIM_WINDOW, SSIM_WINDOW)
        mu_a = uniform_filter(ref, size=size)
        mu_b = uniform_filter(dist, size=size)
        var_a = uniform_filter(ref * ref, size=size) - mu_a * mu_a
        var_b = uniform_filter(dist * dist, size=size) - mu_b * mu_b
        cov = uniform_filter(ref * dist, size=size) - mu_a * mu_b

        ssim = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / \
               ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
        # keep only windows lying fully inside the frame
        lo, hi = SSIM_WINDOW // 2, SSIM_WINDOW // 2 - 1
        h, w = ssim.shape[1:]
        if h <= SSIM_WINDOW or w <= SSIM_WINDOW:
            raise ShapeError(f"struct_sim needs frames larger than {SSIM_WINDOW}x{SSIM_WINDOW}")
        valid = ssim[:, lo:h - hi, lo:w - hi]
        return np.clip(MAX_SCORE * valid.mean(axis=(1, 2)), 0.0, MAX_SCORE)


class ExternalMetric(QualityMetric):
    """Looks scores up by the distorted clip's name, its qp and the segment index."""

    metric_id = MetricId.EXTERNAL

    def __init__(self, table: ScoreTable, bits: int = 8):
        super().__init__(bits)
        self.table = table

    def calc(self, ref: SegmentView, dist: SegmentView) -> float:
        if ref.luma().shape != dist.luma().shape:
            raise ShapeError(f"segment shapes differ: {ref.luma().shape} vs {dist.luma().shape}")
        return self.table.get(dist.clip.name, dist.clip.role.qp or 0, dist.index)

    def reference_scores(self, clip_id: str, layout: SegmentLayout) -> Optional[np.ndarray]:
        """qp=0 rows for a clip as a score array, or None when the table has none."""
        if not self.table.has_pair(clip_id, 0):
            return None
        return self.table.array(clip_id, 0, layout)


BUILTIN_METRICS = {MetricId.PSNR_MAPPED: PsnrMapped, MetricId.STRUCT_SIM: StructSim}


def make_metric(metric: Union[str, MetricId], table: Optional[ScoreTable] = None) -> QualityMetric:
    if not isinstance(metric, MetricId):
        metric = MetricId.parse(metric)
    if metric is MetricId.EXTERNAL:
        if table is None:
            raise ConfigurationError("external metric requires a score table (--scores)")
        return ExternalMetric(table)
    return BUILTIN_METRICS[metric]()


MetricLike = Union[str, MetricId, QualityMetric]


def _resolve(metric: MetricLike) -> QualityMetric:
    return metric if isinstance(metric, QualityMetric) else make_metric(metric)


def score(metric: MetricLike, ref: SegmentView, dist: SegmentView) -> QualityScore:
    return QualityScore(_resolve(metric).calc(ref, dist))


def _score_batch(metric: QualityMetric, ref_clip: Clip, coded_clip: Clip,
                 layout: SegmentLayout, indices: List[SegmentIndex]) -> List[float]:
    out = []
    for index in indices:
        try:
            out.append(score(metric, extract(ref_clip, index, layout),
                             extract(coded_clip, index, layout)).value)
        except SegmentScoreError:
            raise
        except Exception as exc:
            raise SegmentScoreError(index, exc) from exc
    return out


def score_all(metric: MetricLike, ref_clip: Clip, coded_clip: Clip, layout: SegmentLayout,
              n_jobs: int = 1) -> np.ndarray:
    """Per-segment scores as a (windows, rows, cols) array."""
    metric = _resolve(metric)
    check_aligned(ref_clip, coded_clip)
    indices = list(layout.indices())

    if n_jobs == 1:
        values = _score_batch(metric, ref_clip, coded_clip, layout, indices)
    else:
        # one batch per temporal window keeps the task count small
        per_window = layout.rows * layout.cols
        batches = [indices[i:i + per_window] for i in range(0, len(indices), per_window)]
        parts = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_score_batch)(metric, ref_clip, coded_clip, layout, batch) for batch in batches)
        values = [v for part in parts for v in part]
    return np.asarray(values, dtype=np.float64).reshape(layout.shape)

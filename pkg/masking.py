"""
Masking feature: how much the reference content hides distortion.

Pipeline per reference clip:
  1. CSF-style low-pass (separable binomial [1,4,6,4,1]/16, symmetric edges)
  2. per segment, spatial randomness (SR) on the filtered clip decimated 2:1
     in both spatial axes, and temporal randomness (TR) on the filtered clip
     at full resolution
  3. 10-bin histograms of SR and TR over all segments, each normalised,
     concatenated SR first

SR: for every 8x8 block a least-squares predictor from the left, top and
top-left neighbours plus an intercept is fitted over the 49 interior samples.
Block score = RMS residual / (block std + 1).  Blocks with std below 1e-6
score 0.

TR: for every 16x16 block of frame f the best match in frame f-1 is searched
within +-4 pixels.  Block score = best RMS residual / (block std + 1).
Matches that leave the segment are not considered.

Both are averaged over blocks (and frames) and clamped to [0, 1].
"""

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.ndimage import correlate1d

from errors import ShapeError
from media_io import Clip, Plane
from segmenter import SegmentIndex, SegmentLayout, SegmentView, extract

log = logging.getLogger(__name__)

CSF_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
SR_BLOCK = 8
TR_BLOCK = 16
TR_SEARCH = 4
EPS_STAB = 1.0
FLAT_STD = 1e-6
HIST_BINS = 10
DECIMATION = 2

VolumeLike = Union[SegmentView, np.ndarray]


@dataclass(frozen=True)
class MaskingFeature:
    sr_hist: np.ndarray
    tr_hist: np.ndarray

    def __post_init__(self):
        for name, h in (("SR", self.sr_hist), ("TR", self.tr_hist)):
            if h.shape != (HIST_BINS,):
                raise ShapeError(f"{name} histogram must have {HIST_BINS} bins, got {h.shape}")

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([self.sr_hist, self.tr_hist])


# ---------------------------------------------------------------------------
# CSF pre-filter
# ---------------------------------------------------------------------------
def _lowpass(samples: np.ndarray, axes: Tuple[int, int]) -> np.ndarray:
    out = np.asarray(samples, dtype=np.float64)
    for axis in axes:
        out = correlate1d(out, CSF_KERNEL, axis=axis, mode="reflect")
    return out


def csf_prefilter(plane: Plane) -> Plane:
    """Low-pass a plane; same geometry, float64 samples."""
    return Plane(_lowpass(plane.samples, axes=(0, 1)))


def csf_volume(volume: np.ndarray) -> np.ndarray:
    """csf_prefilter applied to every frame of a (frames, H, W) volume."""
    return _lowpass(volume, axes=(1, 2))


def decimate(filtered: np.ndarray) -> np.ndarray:
    """Keep every second row and column of a filtered volume."""
    return filtered[:, ::DECIMATION, ::DECIMATION]


# ---------------------------------------------------------------------------
# block helpers
# ---------------------------------------------------------------------------
def _as_volume(segment: VolumeLike) -> np.ndarray:
    data = segment.luma() if isinstance(segment, SegmentView) else segment
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data[np.newaxis]
    if data.ndim != 3:
        raise ShapeError(f"expected a 2-D plane or 3-D volume, got shape {data.shape}")
    return data


def _blocks(volume: np.ndarray, size: int) -> np.ndarray:
    """(frames, by, bx, size, size) view of the whole blocks in a volume."""
    f, h, w = volume.shape
    by, bx = h // size, w // size
    cropped = volume[:, :by * size, :bx * size]
    return cropped.reshape(f, by, size, bx, size).transpose(0, 1, 3, 2, 4)


def spatial_block_ratios(segment: VolumeLike) -> np.ndarray:
    """Per-block SR scores, shape (frames, block rows, block cols), in [0, 1]."""
    volume = _as_volume(segment)
    if volume.shape[1] < SR_BLOCK or volume.shape[2] < SR_BLOCK:
        raise ShapeError(f"segment {volume.shape[2]}x{volume.shape[1]} smaller than one "
                         f"{SR_BLOCK}x{SR_BLOCK} block")
    blocks = _blocks(volume, SR_BLOCK)
    grid = blocks.shape[:3]
    b = blocks.reshape(-1, SR_BLOCK, SR_BLOCK)

    target = b[:, 1:, 1:].reshape(len(b), -1)
    design = np.stack([
        b[:, 1:, :-1].reshape(len(b), -1),    # left
        b[:, :-1, 1:].reshape(len(b), -1),    # top
        b[:, :-1, :-1].reshape(len(b), -1),   # top-left
        np.ones_like(target),
    ], axis=-1)
    coef = np.linalg.pinv(design) @ target[..., np.newaxis]
    residual = target - (design @ coef)[..., 0]
    rms = np.sqrt(np.mean(residual ** 2, axis=1))

    std = b.reshape(len(b), -1).std(axis=1, ddof=1)
    ratio = np.where(std < FLAT_STD, 0.0, rms / (std + EPS_STAB))
    return np.clip(ratio, 0.0, 1.0).reshape(grid)


def temporal_block_ratios(segment: VolumeLike) -> np.ndarray:
    """Per-block TR scores, shape (frame pairs, block rows, block cols), in [0, 1]."""
    volume = _as_volume(segment)
    if volume.shape[0] < 2:
        raise ShapeError("temporal randomness needs at least two frames")
    if volume.shape[1] < TR_BLOCK or volume.shape[2] < TR_BLOCK:
        raise ShapeError(f"segment {volume.shape[2]}x{volume.shape[1]} smaller than one "
                         f"{TR_BLOCK}x{TR_BLOCK} block")

    f, h, w = volume.shape
    by, bx = h // TR_BLOCK, w // TR_BLOCK
    hh, ww = by * TR_BLOCK, bx * TR_BLOCK
    current = volume[1:, :hh, :ww]
    r = TR_SEARCH
    previous = np.pad(volume[:-1], ((0, 0), (r, r), (r, r)), constant_values=np.nan)

    best = np.full((f - 1, by, bx), np.inf)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            shifted = previous[:, r + dy:r + dy + hh, r + dx:r + dx + ww]
            err = _blocks(current - shifted, TR_BLOCK)
            mse = np.mean(err ** 2, axis=(3, 4))
            # NaN marks a candidate that reaches outside the segment
            mse = np.where(np.isnan(mse), np.inf, mse)
            np.minimum(best, mse, out=best)

    std = _blocks(current, TR_BLOCK).reshape(f - 1, by, bx, -1).std(axis=3, ddof=1)
    return np.clip(np.sqrt(best) / (std + EPS_STAB), 0.0, 1.0)


# ---------------------------------------------------------------------------
# segment scores
# ---------------------------------------------------------------------------
def spatial_randomness(segment: VolumeLike) -> float:
    return float(np.clip(spatial_block_ratios(segment).mean(), 0.0, 1.0))


def temporal_randomness(segment: VolumeLike) -> float:
    return float(np.clip(temporal_block_ratios(segment).mean(), 0.0, 1.0))


def _segment_slice(filtered: np.ndarray, view: SegmentView) -> np.ndarray:
    return filtered[view.frame_start:view.frame_stop, view.y:view.y + view.height,
                    view.x:view.x + view.width]


def _decimated_slice(reduced: np.ndarray, view: SegmentView) -> np.ndarray:
    x, y = view.x // DECIMATION, view.y // DECIMATION
    w, h = view.width // DECIMATION, view.height // DECIMATION
    return reduced[view.frame_start:view.frame_stop, y:y + h, x:x + w]


def _window_scores(filtered: np.ndarray, reduced: np.ndarray, reference: Clip,
                   layout: SegmentLayout, t: int):
    sr = np.empty((layout.rows, layout.cols))
    tr = np.empty((layout.rows, layout.cols))
    for h in range(layout.rows):
        for w in range(layout.cols):
            view = extract(reference, SegmentIndex(w, h, t), layout)
            sr[h, w] = spatial_randomness(_decimated_slice(reduced, view))
            tr[h, w] = temporal_randomness(_segment_slice(filtered, view))
    return sr, tr


def masking_maps(reference: Clip, layout: SegmentLayout,
                 n_jobs: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """SR and TR per segment, each shaped (windows, rows, cols)."""
    filtered = csf_volume(reference.luma_volume)
    reduced = decimate(filtered)
    parts = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_window_scores)(filtered, reduced, reference, layout, t) for t in range(layout.windows))
    sr = np.stack([p[0] for p in parts])
    tr = np.stack([p[1] for p in parts])
    log.debug("%s: mean SR %.3f, mean TR %.3f", reference.name or "reference", sr.mean(), tr.mean())
    return sr, tr


def normalized_histogram(values: np.ndarray) -> np.ndarray:
    counts, _ = np.histogram(np.ravel(values), bins=HIST_BINS, range=(0.0, 1.0))
    return counts / counts.sum()


def masking_feature(reference: Clip, layout: SegmentLayout, n_jobs: int = 1) -> MaskingFeature:
    sr, tr = masking_maps(reference, layout, n_jobs)
    return MaskingFeature(normalized_histogram(sr), normalized_histogram(tr))

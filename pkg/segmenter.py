"""
Spatial-temporal segmentation at the eye-fixation scale.

A clip is cut into W x H x T sub-volumes.  Neighbouring segments overlap by
`spatial_overlap` in both spatial axes; temporal windows are disjoint and
consecutive.  720p with the defaults gives 7 x 7 x 10 = 490 segments.
Remainder pixels on the right/bottom that do not fit a full stride are left
uncovered, and a trailing partial temporal window is dropped.
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, NamedTuple, Tuple

import numpy as np

from errors import BoundsError, ConfigurationError
from media_io import Clip, ClipMetadata

DEFAULT_SEG_WIDTH = 320
DEFAULT_SEG_HEIGHT = 180
DEFAULT_SEG_DURATION = 0.5      # seconds
DEFAULT_SPATIAL_OVERLAP = 0.5


@dataclass(frozen=True)
class SegmentConfig:
    seg_width: int = DEFAULT_SEG_WIDTH
    seg_height: int = DEFAULT_SEG_HEIGHT
    seg_duration: float = DEFAULT_SEG_DURATION
    spatial_overlap: float = DEFAULT_SPATIAL_OVERLAP

    def __post_init__(self):
        if self.seg_width < 1 or self.seg_height < 1:
            raise ConfigurationError(
                f"segment size must be positive, got {self.seg_width}x{self.seg_height}")
        if not self.seg_duration > 0:
            raise ConfigurationError(f"segment duration must be > 0, got {self.seg_duration}")
        if not 0 <= self.spatial_overlap < 1:
            raise ConfigurationError(
                f"spatial overlap must be in [0, 1), got {self.spatial_overlap}")

    @property
    def x_stride(self) -> int:
        return math.ceil(self.seg_width * (1 - self.spatial_overlap) - 1e-9)

    @property
    def y_stride(self) -> int:
        return math.ceil(self.seg_height * (1 - self.spatial_overlap) - 1e-9)

    @property
    def duration_fraction(self) -> Fraction:
        return Fraction(self.seg_duration).limit_denominator(1_000_000)


class SegmentIndex(NamedTuple):
    w: int
    h: int
    t: int


@dataclass(frozen=True)
class SegmentLayout:
    cols: int
    rows: int
    windows: int
    x_stride: int
    y_stride: int
    frames_per_window: int
    seg_width: int = DEFAULT_SEG_WIDTH
    seg_height: int = DEFAULT_SEG_HEIGHT

    @property
    def count(self) -> int:
        return self.cols * self.rows * self.windows

    @property
    def shape(self) -> Tuple[int, int, int]:
        """(windows, rows, cols): the shape of every per-segment array."""
        return self.windows, self.rows, self.cols

    def indices(self) -> Iterator[SegmentIndex]:
        """All segment indices in (t, h, w) row-major order."""
        for t in range(self.windows):
            for h in range(self.rows):
                for w in range(self.cols):
                    yield SegmentIndex(w, h, t)

    def flat_position(self, index: SegmentIndex) -> int:
        return (index.t * self.rows + index.h) * self.cols + index.w

    def from_flat(self, position: int) -> SegmentIndex:
        t, rest = divmod(int(position), self.rows * self.cols)
        h, w = divmod(rest, self.cols)
        return SegmentIndex(w, h, t)

    def contains(self, index: SegmentIndex) -> bool:
        return 0 <= index.w < self.cols and 0 <= index.h < self.rows and 0 <= index.t < self.windows


@dataclass(frozen=True)
class SegmentView:
    """A rectangle x frame-range window onto a clip.  No pixels are copied."""

    clip: Clip
    index: SegmentIndex
    x: int
    y: int
    width: int
    height: int
    frame_start: int
    frame_stop: int

    @property
    def rect(self) -> Tuple[int, int, int, int]:
        return self.x, self.y, self.width, self.height

    @property
    def frame_range(self) -> Tuple[int, int]:
        return self.frame_start, self.frame_stop

    @property
    def frame_count(self) -> int:
        return self.frame_stop - self.frame_start

    def luma(self) -> np.ndarray:
        """(frames, height, width) read-only view of the segment's luma."""
        return self.clip.luma_volume[self.frame_start:self.frame_stop,
                                     self.y:self.y + self.height,
                                     self.x:self.x + self.width]


def _round_half_up(value: Fraction) -> int:
    return math.floor(value + Fraction(1, 2))


def layout(metadata: ClipMetadata, config: SegmentConfig) -> SegmentLayout:
    """Segment grid for a clip; a pure function of (metadata, config)."""
    if config.seg_width > metadata.width or config.seg_height > metadata.height:
        raise ConfigurationError(
            f"segment {config.seg_width}x{config.seg_height} larger than frame "
            f"{metadata.width}x{metadata.height}")
    duration = metadata.duration
    seg_t = config.duration_fraction
    if seg_t > duration:
        raise ConfigurationError(f"segment duration {config.seg_duration}s exceeds clip "
                                 f"duration {float(duration):.3f}s")

    xs, ys = config.x_stride, config.y_stride
    frames_per_window = max(1, _round_half_up(seg_t * Fraction(metadata.frame_rate)))
    windows = min(math.floor(duration / seg_t), metadata.frame_count // frames_per_window)
    if windows < 1:
        raise ConfigurationError("clip too short for a single temporal window")

    return SegmentLayout(
        cols=(metadata.width - config.seg_width) // xs + 1,
        rows=(metadata.height - config.seg_height) // ys + 1,
        windows=windows,
        x_stride=xs,
        y_stride=ys,
        frames_per_window=frames_per_window,
        seg_width=config.seg_width,
        seg_height=config.seg_height,
    )


def extract(clip: Clip, index: SegmentIndex, layout: SegmentLayout,
            config: SegmentConfig = None) -> SegmentView:
    if not layout.contains(index):
        raise BoundsError(f"segment {tuple(index)} outside grid "
                          f"{layout.cols}x{layout.rows}x{layout.windows}")
    width = config.seg_width if config else layout.seg_width
    height = config.seg_height if config else layout.seg_height
    start = index.t * layout.frames_per_window
    return SegmentView(
        clip=clip,
        index=index,
        x=index.w * layout.x_stride,
        y=index.h * layout.y_stride,
        width=width,
        height=height,
        frame_start=start,
        frame_stop=start + layout.frames_per_window,
    )


def iter_views(clip: Clip, layout: SegmentLayout) -> Iterator[SegmentView]:
    for index in layout.indices():
        yield extract(clip, index, layout)

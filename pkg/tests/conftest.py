"""Shared fixtures: small in-memory clips and scratch directories."""

import numpy as np
import pytest

from media_io import REFERENCE, Clip, ClipRole
from segmenter import SegmentConfig


@pytest.fixture
def rng():
    return np.random.default_rng(2017)


@pytest.fixture
def small_segments():
    """32x32 segments, 0.5 s windows; on a 64x64 clip at 8 fps that is 3x3x(frames // 4)."""
    return SegmentConfig(seg_width=32, seg_height=32, seg_duration=0.5, spatial_overlap=0.5)


@pytest.fixture
def make_clip():
    """Factory: clip from a (frames, height, width) luma array."""

    def _make(luma, frame_rate=8, role=REFERENCE, name="clip"):
        return Clip.from_luma(np.clip(np.asarray(luma), 0, 255).astype(np.uint8), frame_rate, role, name)

    return _make


@pytest.fixture
def textured_clip(make_clip, rng):
    """64x64, 8 frames, smooth gradient plus noise, drifting one pixel per frame."""
    yy, xx = np.mgrid[0:64, 0:64]
    base = 96 + 40 * np.sin(xx / 6.0) + 30 * np.cos(yy / 9.0)
    noise = rng.normal(0, 12, size=(72, 72))
    frames = [base + noise[t:t + 64, t:t + 64] for t in range(8)]
    return make_clip(np.stack(frames), name="textured")


@pytest.fixture
def coded_factory(make_clip):
    """Factory: additive-noise coded surrogate of a reference at a given qp."""

    def _coded(reference, qp, strength=0.6, seed=0):
        noise = np.random.default_rng(seed + qp).normal(0, strength * qp, size=reference.luma_volume.shape)
        luma = reference.luma_volume.astype(np.float64) + noise
        return reference.with_luma(np.clip(np.rint(luma), 0, 255), ClipRole.coded(qp))

    return _coded

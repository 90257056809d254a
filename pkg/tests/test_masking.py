"""
Masking feature tests: CSF pre-filter, spatial and temporal randomness, and
the SR/TR histograms of a reference clip.
"""

import numpy as np
import pytest

from errors import ShapeError
from masking import (CSF_KERNEL, HIST_BINS, csf_prefilter, masking_feature, masking_maps,
                     normalized_histogram, spatial_block_ratios, spatial_randomness,
                     temporal_block_ratios, temporal_randomness)
from media_io import Plane
from segmenter import SegmentConfig, layout


class TestCsfPrefilter:
    """Separable binomial low-pass."""

    def test_kernel_sums_to_one(self):
        assert CSF_KERNEL.sum() == pytest.approx(1.0)

    def test_constant_plane_unchanged(self):
        out = csf_prefilter(Plane(np.full((20, 30), 77, dtype=np.uint8)))
        assert out.samples.shape == (20, 30)
        assert np.allclose(out.samples, 77.0)

    def test_impulse_footprint(self):
        plane = np.zeros((21, 21))
        plane[10, 10] = 256.0
        out = csf_prefilter(Plane(plane)).samples
        expected = 256.0 * np.outer(CSF_KERNEL, CSF_KERNEL)
        assert np.allclose(out[8:13, 8:13], expected)
        assert out.sum() == pytest.approx(256.0)
        assert np.count_nonzero(out) == 25

    def test_checkerboard_attenuated(self):
        yy, xx = np.mgrid[0:16, 0:16]
        board = np.where((xx + yy) % 2 == 0, 200.0, 50.0)
        out = csf_prefilter(Plane(board)).samples
        assert np.abs(out - out.mean()).max() < 75.0
        # period-2 content sits at the kernel's zero
        assert np.allclose(out[4:12, 4:12], 125.0)


class TestSpatialRandomness:
    """Per-block causal prediction residual."""

    def test_constant_segment(self):
        assert spatial_randomness(np.full((2, 32, 32), 90.0)) == 0.0

    def test_horizontal_ramp_predictable(self):
        ramp = np.tile(np.arange(32, dtype=np.float64) * 3.0, (2, 32, 1))
        assert spatial_randomness(ramp) < 1e-6

    def test_uniform_noise_near_one(self):
        """Monte Carlo over 100 noise segments."""
        rng = np.random.default_rng(11)
        values = [spatial_randomness(rng.uniform(0, 255, size=(1, 32, 32))) for _ in range(100)]
        assert 0.85 < np.mean(values) <= 1.0
        assert all(0.0 <= v <= 1.0 for v in values)

    def test_block_grid_shape(self):
        ratios = spatial_block_ratios(np.zeros((3, 20, 35)))
        assert ratios.shape == (3, 2, 4)

    def test_segment_smaller_than_block(self):
        with pytest.raises(ShapeError):
            spatial_randomness(np.zeros((1, 6, 6)))


class TestTemporalRandomness:
    """Block motion search residual."""

    def test_static_frames(self, rng):
        frame = rng.uniform(0, 255, size=(32, 32))
        assert temporal_randomness(np.stack([frame] * 4)) == 0.0

    def test_translation_found_in_interior(self, rng):
        texture = rng.uniform(0, 255, size=(48, 80))
        frames = np.stack([texture[:, 16 - 2 * t:64 - 2 * t] for t in range(4)])
        ratios = temporal_block_ratios(frames)
        assert ratios.shape == (3, 3, 3)
        # blocks away from the left border find the 2-pixel shift exactly
        assert np.allclose(ratios[:, :, 1:], 0.0, atol=1e-9)

    def test_independent_noise_near_one(self):
        rng = np.random.default_rng(12)
        values = [temporal_randomness(rng.uniform(0, 255, size=(3, 32, 32))) for _ in range(100)]
        assert np.mean(values) > 0.9

    def test_single_frame_rejected(self):
        with pytest.raises(ShapeError, match="two frames"):
            temporal_randomness(np.zeros((1, 32, 32)))


class TestMaskingFeature:
    """Histograms over every segment of a reference clip."""

    def test_constant_clip(self, make_clip):
        clip = make_clip(np.full((20, 180, 320), 128), frame_rate=10)
        feature = masking_feature(clip, layout(clip.metadata, SegmentConfig()))
        expected = np.zeros(HIST_BINS)
        expected[0] = 1.0
        assert np.array_equal(feature.sr_hist, expected)
        assert np.array_equal(feature.tr_hist, expected)

    def test_noise_clip_lands_in_top_bins(self, make_clip):
        rng = np.random.default_rng(3)
        clip = make_clip(rng.integers(0, 256, size=(20, 180, 320)), frame_rate=10)
        feature = masking_feature(clip, layout(clip.metadata, SegmentConfig()))
        assert feature.sr_hist[-3:].sum() >= 0.9
        assert feature.tr_hist[-3:].sum() >= 0.9

    def test_slow_pan_scores_low_temporal_randomness(self, make_clip):
        rng = np.random.default_rng(6)
        texture = rng.integers(0, 256, size=(180, 340))
        clip = make_clip(np.stack([texture[:, t:t + 320] for t in range(20)]), frame_rate=10)
        grid = layout(clip.metadata, SegmentConfig())
        _, tr = masking_maps(clip, grid)
        assert tr.max() < 0.15
        feature = masking_feature(clip, grid)
        assert feature.tr_hist[:2].sum() == pytest.approx(1.0)

    def test_segments_narrower_than_two_motion_blocks(self, make_clip):
        rng = np.random.default_rng(8)
        clip = make_clip(rng.integers(0, 256, size=(8, 48, 48)))
        grid = layout(clip.metadata, SegmentConfig(seg_width=24, seg_height=24, seg_duration=0.5))
        sr, tr = masking_maps(clip, grid)
        assert sr.shape == tr.shape == grid.shape
        assert np.all((tr >= 0) & (tr <= 1))

    def test_half_constant_half_noise(self, make_clip):
        rng = np.random.default_rng(4)
        luma = np.full((20, 180, 640), 100)
        luma[:, :, 320:] = rng.integers(0, 256, size=(20, 180, 320))
        clip = make_clip(luma, frame_rate=10)
        grid = layout(clip.metadata, SegmentConfig(spatial_overlap=0.0))
        assert (grid.cols, grid.rows, grid.windows) == (2, 1, 4)
        feature = masking_feature(clip, grid)
        assert feature.sr_hist[0] == pytest.approx(0.5)
        assert feature.sr_hist[-3:].sum() == pytest.approx(0.5)

    def test_histograms_normalized(self, textured_clip, small_segments):
        feature = masking_feature(textured_clip, layout(textured_clip.metadata, small_segments))
        assert feature.sr_hist.sum() == pytest.approx(1.0, abs=1e-12)
        assert feature.tr_hist.sum() == pytest.approx(1.0, abs=1e-12)
        assert feature.values.shape == (20,)
        assert np.all(feature.values >= 0)

    def test_parallel_maps_match(self, textured_clip, small_segments):
        grid = layout(textured_clip.metadata, small_segments)
        sr1, tr1 = masking_maps(textured_clip, grid)
        sr2, tr2 = masking_maps(textured_clip, grid, n_jobs=2)
        assert sr1.shape == grid.shape
        assert np.array_equal(sr1, sr2) and np.array_equal(tr1, tr2)

    def test_histogram_edges(self):
        hist = normalized_histogram(np.array([0.0, 0.05, 0.1, 0.95, 1.0]))
        assert hist[0] == pytest.approx(0.4)
        assert hist[1] == pytest.approx(0.2)
        assert hist[9] == pytest.approx(0.4)

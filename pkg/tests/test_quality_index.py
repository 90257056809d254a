"""
Quality index tests: built-in metrics against brute-force formulas, score
tables, and per-segment scoring over a layout.
"""

import math

import numpy as np
import pytest

from errors import (ConfigurationError, FormatError, IncompleteTableError, MissingScoreError,
                    ScoreRangeError, SegmentScoreError, ShapeError)
from media_io import ClipRole
from quality_index import (MetricId, PsnrMapped, QualityScore, ScoreTable, StructSim, load_score_table,
                           make_metric, score, score_all, write_score_table)
from segmenter import SegmentConfig, SegmentIndex, extract, layout


def whole(clip):
    """View covering the whole clip as a single segment."""
    m = clip.metadata
    grid = layout(m, SegmentConfig(m.width, m.height, float(m.duration), 0.0))
    return extract(clip, SegmentIndex(0, 0, 0), grid)


class TestBuiltinMetrics:
    """psnr_mapped and struct_sim."""

    @pytest.mark.parametrize("metric", ["psnr_mapped", "struct_sim"])
    def test_identical_segments_score_100(self, metric, textured_clip):
        view = whole(textured_clip)
        assert score(metric, view, view).value == 100.0

    def test_psnr_offset_16(self, make_clip, rng):
        ref = make_clip(rng.integers(0, 200, size=(4, 32, 32)))
        dist = make_clip(ref.luma_volume.astype(int) + 16)
        psnr = 10 * math.log10(255 ** 2 / 256.0)
        expected = min(100.0, 100.0 * psnr / 60.0)
        assert score("psnr_mapped", whole(ref), whole(dist)).value == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(40.08, abs=0.01)

    def test_psnr_is_mean_of_frame_scores(self, textured_clip, coded_factory):
        coded = coded_factory(textured_clip, 20)
        a, b = whole(textured_clip), whole(coded)
        per_frame = []
        for f in range(textured_clip.metadata.frame_count):
            mse = np.mean((a.luma()[f].astype(float) - b.luma()[f].astype(float)) ** 2)
            per_frame.append(min(100.0, 100.0 * 10 * math.log10(255 ** 2 / mse) / 60.0))
        assert PsnrMapped().calc(a, b) == pytest.approx(np.mean(per_frame), rel=1e-12)

    def test_struct_sim_luminance_term(self, make_clip):
        ref = make_clip(np.full((2, 24, 24), 128))
        dist = make_clip(np.full((2, 24, 24), 144))
        c1 = (0.01 * 255) ** 2
        expected = 100.0 * (2 * 128 * 144 + c1) / (128 ** 2 + 144 ** 2 + c1)
        got = StructSim().calc(whole(ref), whole(dist))
        assert got == pytest.approx(expected, rel=1e-6)
        assert got < 100.0

    def test_psnr_non_increasing_with_noise(self, textured_clip):
        """Scores fall as noise variance grows, over 12 variance levels."""
        ref = whole(textured_clip)
        volume = textured_clip.luma_volume.astype(np.float64)
        scores = []
        for sigma in np.linspace(1, 40, 12):
            noisy = np.random.default_rng(5).normal(0, 1, volume.shape) * sigma + volume
            coded = textured_clip.with_luma(np.clip(np.rint(noisy), 0, 255), ClipRole.coded(30))
            scores.append(score("psnr_mapped", ref, whole(coded)).value)
        assert all(b <= a + 1e-9 for a, b in zip(scores, scores[1:]))

    def test_shape_mismatch(self, textured_clip, make_clip):
        small = make_clip(textured_clip.luma_volume[:, :32, :32])
        with pytest.raises(ShapeError):
            PsnrMapped().calc(whole(textured_clip), whole(small))

    def test_score_range(self):
        with pytest.raises(ScoreRangeError):
            QualityScore(100.5)

    def test_unknown_metric(self):
        with pytest.raises(ConfigurationError, match="vmaf"):
            MetricId.parse("vmaf")

    def test_external_needs_table(self):
        with pytest.raises(ConfigurationError, match="--scores"):
            make_metric("external")


class TestScoreAll:
    """Per-segment scoring over a small grid."""

    def test_reflexive_grid(self, textured_clip, small_segments):
        grid = layout(textured_clip.metadata, small_segments)
        coded = textured_clip.with_luma(textured_clip.luma_volume, ClipRole.coded(10))
        out = score_all("psnr_mapped", textured_clip, coded, grid)
        assert out.shape == (2, 3, 3)
        assert np.all(out == 100.0)

    def test_parallel_matches_serial(self, textured_clip, small_segments, coded_factory):
        grid = layout(textured_clip.metadata, small_segments)
        coded = coded_factory(textured_clip, 24)
        serial = score_all("struct_sim", textured_clip, coded, grid)
        parallel = score_all("struct_sim", textured_clip, coded, grid, n_jobs=2)
        assert np.array_equal(serial, parallel)

    def test_external_passthrough(self, textured_clip, small_segments, coded_factory):
        grid = layout(textured_clip.metadata, small_segments)
        coded = coded_factory(textured_clip, 24)
        entries = {("textured", 24, ix): float(n) for n, ix in enumerate(grid.indices())}
        out = score_all(make_metric("external", ScoreTable(entries)), textured_clip, coded, grid)
        assert out.ravel().tolist() == [float(n) for n in range(grid.count)]

    def test_external_missing_entry_names_segment(self, textured_clip, small_segments, coded_factory):
        grid = layout(textured_clip.metadata, small_segments)
        coded = coded_factory(textured_clip, 24)
        entries = {("textured", 24, ix): 50.0 for ix in grid.indices() if ix != SegmentIndex(2, 1, 1)}
        with pytest.raises(SegmentScoreError) as info:
            score_all(make_metric("external", ScoreTable(entries)), textured_clip, coded, grid)
        assert info.value.segment == SegmentIndex(2, 1, 1)
        assert isinstance(info.value.cause, MissingScoreError)


class TestScoreTable:
    """CSV score table loading."""

    @pytest.fixture
    def grid(self, textured_clip, small_segments):
        return layout(textured_clip.metadata, small_segments)

    def test_well_formed(self, tmp_path, grid):
        path = str(tmp_path / "scores.csv")
        write_score_table([("clip", 30, ix, 80.0) for ix in grid.indices()], path)
        table = load_score_table(path, grid)
        assert len(table) == grid.count
        assert table.pairs() == [("clip", 30)]
        assert table.get("clip", 30, SegmentIndex(1, 1, 1)) == 80.0

    def test_out_of_range_score(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("clip_id,qp,w,h,t,score\nclip,30,0,0,0,101\n")
        with pytest.raises(ScoreRangeError, match="line 2"):
            load_score_table(str(path))

    def test_missing_row(self, tmp_path, grid):
        path = str(tmp_path / "scores.csv")
        rows = [("clip", 30, ix, 80.0) for ix in grid.indices() if ix != SegmentIndex(1, 2, 0)]
        write_score_table(rows, path)
        with pytest.raises(IncompleteTableError, match=r"w=1,h=2,t=0") as info:
            load_score_table(path, grid)
        assert info.value.gaps == [("clip", 30, SegmentIndex(1, 2, 0))]

    def test_bad_header(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("clip,qp,score\n")
        with pytest.raises(FormatError):
            load_score_table(str(path))

    def test_duplicate_row(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("clip_id,qp,w,h,t,score\nclip,30,0,0,0,50\nclip,30,0,0,0,60\n")
        with pytest.raises(FormatError, match="duplicate"):
            load_score_table(str(path))

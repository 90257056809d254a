"""
Feature extraction tests: slopes, significant-segment selection, the
cumulative degradation feature and per-source 40-D vectors.
"""

import math

import numpy as np
import pytest

from errors import ConfigurationError, EmptyInputError, MissingDataError, ShapeError
from features import (FEATURE_DIM, THRESHOLDS, DegradationFeature, SlopeParams, assemble,
                      degradation_at, degradation_feature, extract_source_features, select_significant,
                      selection_count, significant_mask, slope)
from masking import MaskingFeature, masking_feature
from quality_index import ScoreTable, make_metric
from segmenter import SegmentIndex, layout

ORIGIN = SegmentIndex(0, 0, 0)


def scores(value):
    return np.full((1, 1, 1), float(value))


class TestSlope:
    """Local quality degradation slope."""

    def test_positive(self):
        assert slope({28: scores(90), 30: scores(80)}, ORIGIN, 30) == 5.0

    def test_flat(self):
        assert slope({28: scores(87.3), 30: scores(87.3)}, ORIGIN, 30) == 0.0

    def test_quality_increase_is_negative(self):
        assert slope({28: scores(80), 30: scores(90)}, ORIGIN, 30) == -5.0

    def test_missing_neighbour(self):
        with pytest.raises(MissingDataError) as info:
            slope({30: scores(80)}, ORIGIN, 30)
        assert info.value.missing == [28]

    def test_shift_invariant(self, rng):
        for _ in range(100):
            a, b, c = rng.uniform(0, 100, 3)
            base = slope({28: scores(a), 30: scores(b)}, ORIGIN, 30)
            shifted = slope({28: scores(a + c), 30: scores(b + c)}, ORIGIN, 30)
            assert shifted == pytest.approx(base, abs=1e-9)

    def test_params_validated(self):
        with pytest.raises(ConfigurationError):
            SlopeParams(k=0)
        with pytest.raises(ConfigurationError):
            SlopeParams(p=0.0)


class TestSelectSignificant:
    """Top ceil(p*N) slopes with (t, h, w) tie-breaking."""

    def test_order_statistics(self):
        slopes = np.arange(1, 11, dtype=float).reshape(1, 1, 10)
        chosen = select_significant(slopes, 0.8)
        assert [slopes[0, 0, ix.w] for ix in chosen] == [3, 4, 5, 6, 7, 8, 9, 10]

    def test_ties_keep_earlier_segments(self):
        slopes = np.ones((10, 7, 7))
        chosen = select_significant(slopes, 0.8)
        assert len(chosen) == 392
        expected = [SegmentIndex(w, h, t) for t in range(10) for h in range(7) for w in range(7)][:392]
        assert chosen == expected

    def test_single_segment(self):
        assert select_significant(np.array([[[4.2]]]), 0.8) == [ORIGIN]

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            select_significant(np.zeros((0, 1, 1)), 0.8)

    def test_count_rule(self):
        assert selection_count(490, 0.8) == 392
        assert selection_count(10, 0.8) == 8
        assert selection_count(1, 0.8) == 1
        assert selection_count(7, 0.5) == 4

    def test_invariant_under_monotone_transform(self, rng):
        """Exact count and rank invariance, over 100 random slope sets."""
        for _ in range(100):
            n = int(rng.integers(1, 60))
            p = float(rng.uniform(0.05, 1.0))
            slopes = rng.normal(0, 3, size=(1, 1, n))
            mask = significant_mask(slopes, p)
            assert mask.sum() == math.ceil(round(p * n, 9))
            assert np.array_equal(mask, significant_mask(np.exp(slopes / 4) * 10 - 3, p))


class TestDegradationFeature:
    """Cumulative distribution of quality deltas at 2, 4, ..., 40."""

    def test_lossless(self):
        assert np.array_equal(degradation_feature([0.0] * 12).values, np.ones(20))

    def test_even_spread(self):
        f = degradation_feature(np.arange(2, 42, 2)).values
        assert np.allclose(f, np.arange(1, 21) / 20)

    def test_beyond_cap(self):
        assert np.array_equal(degradation_feature([50, 50]).values, np.zeros(20))

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            degradation_feature([])

    def test_brute_force_recount(self, rng):
        """1000 random multisets recounted threshold by threshold."""
        for _ in range(1000):
            deltas = rng.uniform(0, 60, size=int(rng.integers(1, 501)))
            f = degradation_feature(deltas).values
            for n, threshold in enumerate(THRESHOLDS):
                assert f[n] == sum(1 for d in deltas if d <= threshold) / len(deltas)
            assert np.all(np.diff(f) >= 0)
            assert np.all((f >= 0) & (f <= 1))

    def test_wrong_length(self):
        with pytest.raises(ShapeError):
            DegradationFeature(np.zeros(19))


class TestAssemble:
    """Concatenation order and length."""

    def test_zeros(self):
        vec = assemble(DegradationFeature(np.zeros(20)),
                       MaskingFeature(np.zeros(10), np.zeros(10)), "s", 30)
        assert np.array_equal(vec.x, np.zeros(40))

    def test_order(self):
        f = np.linspace(0, 1, 20)
        sr, tr = np.full(10, 0.1), np.full(10, 0.2)
        vec = assemble(DegradationFeature(f), MaskingFeature(sr, tr), "s", 30)
        assert vec.x.shape == (FEATURE_DIM,)
        assert np.array_equal(vec.x[:20], f)
        assert np.array_equal(vec.x[20:30], sr)
        assert np.array_equal(vec.x[30:], tr)
        assert (vec.source_id, vec.qp) == ("s", 30)


class TestDegradationAt:
    """Feature of one coded clip from per-qp score arrays."""

    def test_uses_significant_segments_only(self):
        # slopes 0..9 at qp 30; the two flattest segments are ignored
        s28 = np.full((1, 1, 10), 90.0)
        s30 = s28 - 2 * np.arange(10)
        ref = np.full((1, 1, 10), 100.0)
        deg = degradation_at({28: s28, 30: s30}, ref, 30, SlopeParams(2, 0.8)).values
        deltas = (ref - s30).ravel()[2:]
        assert np.array_equal(deg, degradation_feature(deltas).values)

    def test_low_qp_uses_every_segment(self):
        s1 = np.array([[[99.0, 95.0]]])
        deg = degradation_at({1: s1}, np.full((1, 1, 2), 100.0), 1).values
        assert deg[0] == 0.5
        assert deg[2] == 1.0


class TestExtractSourceFeatures:
    """40-D vectors for every qp of a source."""

    def test_builtin_metric(self, textured_clip, coded_factory, small_segments):
        grid = layout(textured_clip.metadata, small_segments)
        qps = [1, 3, 5, 7]
        coded = {qp: coded_factory(textured_clip, qp) for qp in qps}
        vectors = extract_source_features(textured_clip, coded, qps, grid)
        assert [v.qp for v in vectors] == qps
        assert all(v.x.shape == (40,) and v.source_id == "textured" for v in vectors)
        # same reference, same masking half
        assert all(np.array_equal(v.x[20:], vectors[0].x[20:]) for v in vectors)
        # more noise never raises the cumulative curve
        for a, b in zip(vectors, vectors[1:]):
            assert b.x[:20].sum() <= a.x[:20].sum()

    def test_masking_half_ignores_coded_clips(self, textured_clip, coded_factory, small_segments):
        """Masking values depend on the reference alone, over 100 random coded sets."""
        grid = layout(textured_clip.metadata, small_segments)
        qps = [1, 3]
        expected = masking_feature(textured_clip, grid).values
        rng = np.random.default_rng(5)
        for _ in range(100):
            strength = float(rng.uniform(0.1, 4.0))
            seed = int(rng.integers(0, 10_000))
            coded = {qp: coded_factory(textured_clip, qp, strength, seed) for qp in qps}
            for v in extract_source_features(textured_clip, coded, qps, grid):
                assert np.array_equal(v.x[20:], expected)

    def test_lossless_coded_clip(self, textured_clip, small_segments):
        grid = layout(textured_clip.metadata, small_segments)
        vectors = extract_source_features(textured_clip, lambda qp: textured_clip, [1, 3], grid)
        assert all(np.array_equal(v.x[:20], np.ones(20)) for v in vectors)

    def test_external_table_without_coded_clips(self, textured_clip, small_segments):
        grid = layout(textured_clip.metadata, small_segments)
        entries = {}
        for ix in grid.indices():
            entries[("textured", 0, ix)] = 95.0
            entries[("textured", 2, ix)] = 90.0
            entries[("textured", 4, ix)] = 70.0
        metric = make_metric("external", ScoreTable(entries))
        vectors = extract_source_features(textured_clip, None, [2, 4], grid, metric)
        assert vectors[0].x[2] == 1.0     # delta 5 <= 6
        assert vectors[1].x[:12].sum() == 0.0   # delta 25 > 24
        assert vectors[1].x[12] == 1.0

    def test_builtin_metric_needs_coded_clips(self, textured_clip, small_segments):
        grid = layout(textured_clip.metadata, small_segments)
        with pytest.raises(MissingDataError):
            extract_source_features(textured_clip, None, [1], grid)

    def test_missing_slope_neighbour(self, textured_clip, small_segments):
        grid = layout(textured_clip.metadata, small_segments)
        with pytest.raises(MissingDataError) as info:
            extract_source_features(textured_clip, {}, [1, 5], grid)
        assert info.value.missing == [3]

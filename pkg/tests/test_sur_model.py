"""
SUR model tests: Gaussian fit, empirical and Gaussian SUR, monotone
projection and JND extraction.
"""

import numpy as np
import pytest

from errors import ConfigurationError, ContractError, DegenerateSampleError, FormatError
from sur_model import (BEYOND_GRID, GaussianJndModel, JndAnnotationSet, Provenance, SurCurve,
                       analytic_jnd, empirical_curve, empirical_sur, fit_gaussian, gaussian_curve,
                       gaussian_sur, jnd_point, monotone_project, q_function, q_inverse)
from synthetic import draw_subjects


def annotations(qps, source_id="src"):
    return JndAnnotationSet(source_id, tuple(qps))


class TestFitGaussian:
    """Sample mean and unbiased sample standard deviation."""

    def test_hand_computed(self):
        model = fit_gaussian(annotations([25, 27, 29]))
        assert model.mean == pytest.approx(27.0)
        assert model.std == pytest.approx(2.0)

    def test_zero_variance(self):
        with pytest.raises(DegenerateSampleError):
            fit_gaussian(annotations([30, 30]))

    def test_single_subject(self):
        with pytest.raises(DegenerateSampleError):
            fit_gaussian(annotations([30]))

    def test_symmetric_pairs(self):
        model = fit_gaussian(annotations([30, 30, 26, 34, 29, 31]))
        assert model.mean == pytest.approx(30.0)

    def test_qp_range_checked(self):
        with pytest.raises(FormatError):
            annotations([0, 20])


class TestEmpiricalSur:
    """Share of subjects who have not yet noticed."""

    def test_six_of_thirty(self):
        qps = [20] * 6 + [40] * 24
        assert empirical_sur(annotations(qps), 30) == pytest.approx(0.8)

    def test_lossless_copy(self):
        assert empirical_sur(annotations([20, 25, 30]), 0) == 1.0

    def test_everyone_notices_at_51(self):
        assert empirical_sur(annotations([20, 51, 30]), 51) == 0.0

    def test_raw_flags_take_precedence(self):
        flags = {("a", 30): True, ("b", 30): False}
        ann = JndAnnotationSet("src", (40, 40), ("a", "b"), flags)
        assert empirical_sur(ann, 30) == 0.5
        # no flags at qp 31, fall back to JND points
        assert empirical_sur(ann, 31) == 1.0

    def test_non_increasing(self, rng):
        for _ in range(100):
            ann = annotations(rng.integers(1, 52, size=int(rng.integers(1, 40))))
            assert empirical_curve(ann).is_monotone

    def test_converges_to_half_at_mean(self):
        rng = np.random.default_rng(8)
        ann = annotations(draw_subjects(rng, 27.0, 3.0, 1000))
        assert empirical_sur(ann, 27) == pytest.approx(0.5, abs=0.05)


class TestGaussianSur:
    """Q-function of the standardised qp."""

    @pytest.mark.parametrize("z,expected", [
        (0.0, 0.5),
        (1.0, 0.15865525393145707),
        (-1.0, 0.8413447460685429),
        (2.0, 0.022750131948179195),
        (3.0, 0.0013498980316301035),
        (-2.5, 0.9937903346742238),
    ])
    def test_q_function_values(self, z, expected):
        assert q_function(z) == pytest.approx(expected, abs=1e-10)

    def test_at_mean_and_one_sigma(self):
        model = GaussianJndModel(27.0, 3.0)
        assert gaussian_sur(model, 27) == 0.5
        assert gaussian_sur(model, 30) == pytest.approx(0.158655, abs=1e-6)
        assert gaussian_sur(model, 24) == pytest.approx(0.841345, abs=1e-6)

    def test_symmetry(self, rng):
        for _ in range(200):
            model = GaussianJndModel(float(rng.uniform(10, 40)), float(rng.uniform(0.5, 10)))
            z = float(rng.uniform(-6, 6))
            total = gaussian_sur(model, model.mean - z * model.std) + \
                gaussian_sur(model, model.mean + z * model.std)
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_inverse(self):
        for p in (0.05, 0.25, 0.5, 0.75, 0.95):
            assert q_function(q_inverse(p)) == pytest.approx(p, abs=1e-12)

    def test_vectorised_curve(self):
        curve = gaussian_curve(GaussianJndModel(27.0, 3.0))
        assert curve.provenance is Provenance.GAUSSIAN
        assert curve.qps.tolist() == list(range(1, 52))
        assert curve.is_monotone


class TestMonotoneProject:
    """Pool-adjacent-violators, then clamp."""

    def test_monotone_input_unchanged(self):
        values = [1.0, 0.9, 0.9, 0.4, 0.0]
        assert np.array_equal(monotone_project(values).values, values)

    def test_violating_pair_pooled(self):
        assert np.allclose(monotone_project([0.9, 1.0]).values, [0.95, 0.95])

    def test_clamped(self):
        assert np.allclose(monotone_project([1.2, 0.5, -0.1]).values, [1.0, 0.5, 0.0])

    def test_idempotent(self, rng):
        for _ in range(100):
            once = monotone_project(rng.uniform(-0.2, 1.2, size=int(rng.integers(1, 30))))
            twice = monotone_project(once.values)
            assert once.is_monotone
            assert np.allclose(once.values, twice.values, atol=1e-12)

    def test_least_squares_against_brute_force(self):
        """Three-point sequences: compare to a dense search over non-increasing triples."""
        grid = np.linspace(0, 1, 41)
        values = np.array([0.3, 0.8, 0.5])
        best, best_err = None, np.inf
        for a in grid:
            for b in grid[grid <= a]:
                for c in grid[grid <= b]:
                    err = (a - 0.3) ** 2 + (b - 0.8) ** 2 + (c - 0.5) ** 2
                    if err < best_err:
                        best, best_err = (a, b, c), err
        assert np.allclose(monotone_project(values).values, best, atol=0.025)

    def test_provenance_predicted(self):
        assert monotone_project([0.5]).provenance is Provenance.PREDICTED


class TestJndPoint:
    """Interpolated threshold crossing."""

    def test_gaussian_27_3(self):
        curve = gaussian_curve(GaussianJndModel(27.0, 3.0))
        assert jnd_point(curve) == pytest.approx(27 - 0.6744897501960817 * 3, abs=0.01)
        assert jnd_point(curve) == pytest.approx(24.976, abs=0.01)

    def test_median_threshold(self):
        curve = gaussian_curve(GaussianJndModel(27.0, 3.0))
        assert jnd_point(curve, 0.5) == 27.0

    def test_constant_curve_beyond_grid(self):
        curve = SurCurve(np.arange(1, 52), np.ones(51), Provenance.PREDICTED)
        assert jnd_point(curve) == BEYOND_GRID

    def test_already_below_at_first_qp(self):
        curve = SurCurve(np.arange(1, 52), np.full(51, 0.2), Provenance.PREDICTED)
        assert jnd_point(curve) == 1.0

    def test_interpolation_error_bound(self, rng):
        """Grid JND matches the analytic inverse within 0.02 qp."""
        for _ in range(100):
            model = GaussianJndModel(float(rng.uniform(15, 35)), float(rng.uniform(5, 8)))
            for threshold in (0.75, 0.5, 0.6):
                grid_jnd = jnd_point(gaussian_curve(model), threshold)
                assert grid_jnd == pytest.approx(analytic_jnd(model, threshold), abs=0.02)

    def test_non_monotone_rejected(self):
        curve = SurCurve(np.array([1, 2, 3]), np.array([0.9, 1.0, 0.5]), Provenance.EMPIRICAL)
        with pytest.raises(ContractError, match="project"):
            jnd_point(curve)

    def test_threshold_range(self):
        curve = gaussian_curve(GaussianJndModel(27.0, 3.0))
        with pytest.raises(ConfigurationError):
            jnd_point(curve, 1.0)

    def test_predicted_curve_must_be_monotone(self):
        with pytest.raises(ContractError):
            SurCurve(np.array([1, 2]), np.array([0.5, 0.6]), Provenance.PREDICTED)

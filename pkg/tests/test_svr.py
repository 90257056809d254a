"""
SVR tests: scaler, SMO against a dense QP solve, KKT conditions, prediction,
curve assembly, grid search and model files.
"""

import json

import numpy as np
import pytest
from scipy.optimize import minimize
from sklearn.metrics.pairwise import rbf_kernel

from errors import (CorruptModelError, InsufficientDataError, MissingDataError, ModelVersionError,
                    NonFiniteError, ShapeError)
from features import FeatureVector
from sur_model import Provenance, monotone_project
from svr import (FeatureScaler, SvrHyperParams, SvrModel, dual_objective, fit, fit_scaler, grid_search,
                 kkt_violations, load_model, predict, predict_sur_curve, save_model, solve_dual, train)


def dense_dual(kernel, targets, C, epsilon):
    """Reference solve of the doubled epsilon-SVR dual with SLSQP."""
    n = len(targets)
    s = np.concatenate([np.ones(n), -np.ones(n)])
    big = np.block([[kernel, kernel], [kernel, kernel]]) * np.outer(s, s)
    p = np.concatenate([epsilon - targets, epsilon + targets])
    result = minimize(
        lambda a: 0.5 * a @ big @ a + p @ a,
        np.zeros(2 * n),
        jac=lambda a: big @ a + p,
        bounds=[(0.0, C)] * (2 * n),
        constraints=[{"type": "eq", "fun": lambda a: s @ a, "jac": lambda a: s}],
        method="SLSQP",
        options={"ftol": 1e-15, "maxiter": 2000},
    )
    return result.x[:n], result.x[n:], float(result.fun)


class TestFeatureScaler:
    """Per-dimension standardisation."""

    def test_two_samples(self):
        scaler = fit_scaler(np.stack([np.zeros(40), np.full(40, 2.0)]))
        assert np.allclose(scaler.mean, 1.0)
        assert np.allclose(scaler.std, np.sqrt(2.0))

    def test_identical_samples_only_shift(self):
        x = np.tile(np.arange(40, dtype=float), (3, 1))
        scaler = fit_scaler(x)
        assert scaler.zero_variance.all()
        assert np.array_equal(scaler.transform(x[0] + 1.5), np.full(40, 1.5))

    def test_mean_maps_to_zero(self, rng):
        x = rng.normal(3, 2, size=(10, 40))
        scaler = fit_scaler(x)
        assert np.allclose(scaler.transform(scaler.mean), 0.0)

    def test_needs_two_samples(self):
        with pytest.raises(InsufficientDataError):
            fit_scaler(np.zeros((1, 40)))


class TestTrain:
    """SMO solution quality."""

    def test_constant_targets(self, rng):
        x = rng.normal(size=(15, 40))
        model = train(x, np.full(15, 0.8), SvrHyperParams(epsilon=0.01))
        pred = predict(model, x)
        assert np.all((pred >= 0.79) & (pred <= 0.81))
        assert predict(model, rng.normal(size=40) * 5) == pytest.approx(0.8, abs=0.01)

    def test_twelve_point_toy_matches_dense_solve(self):
        x = np.linspace(0, 3, 12)[:, None]
        y = 0.5 + 0.4 * np.sin(2 * x[:, 0])
        params = SvrHyperParams(C=1.0, epsilon=0.05, gamma=1.0, tol=1e-8, max_passes=2000)
        kernel = rbf_kernel(x, x, gamma=1.0)
        solution = solve_dual(kernel, y, params)
        alpha, alpha_star, objective = dense_dual(kernel, y, 1.0, 0.05)
        assert solution.converged
        assert solution.objective == pytest.approx(objective, abs=1e-6)
        assert np.allclose(kernel @ solution.beta, kernel @ (alpha - alpha_star), atol=1e-4)

    def test_oracle_objective_fifty_sets(self):
        """SMO objective equals a dense QP solve on 50 random small problems."""
        rng = np.random.default_rng(99)
        for _ in range(50):
            n = int(rng.integers(3, 21))
            x = rng.normal(size=(n, 3))
            y = rng.uniform(0, 1, size=n)
            gamma = float(rng.uniform(0.2, 2.0))
            params = SvrHyperParams(C=1.0, epsilon=float(rng.uniform(0, 0.1)), gamma=gamma,
                                    tol=1e-8, max_passes=5000)
            kernel = rbf_kernel(x, x, gamma=gamma)
            solution = solve_dual(kernel, y, params)
            _, _, objective = dense_dual(kernel, y, 1.0, params.epsilon)
            assert solution.objective == pytest.approx(objective, abs=1e-6)
            assert solution.objective == pytest.approx(
                dual_objective(kernel, y, solution.alpha, solution.alpha_star, params.epsilon), abs=1e-9)
            model = train(x, y, params)
            assert kkt_violations(model, x, y).max() < 1e-6

    def test_sinc_fit_with_grid_search(self):
        x = np.linspace(-3, 3, 50)[:, None]
        y = np.sinc(x[:, 0])
        grid = {"C": [10.0, 100.0], "gamma": [3.0, 10.0, 30.0], "epsilon": [0.01]}
        best, results = grid_search(x, y, grid=grid, base=SvrHyperParams(max_passes=1000))
        assert len(results) == 6
        model = fit(x, y, best)
        assert np.sqrt(np.mean((predict(model, x) - y) ** 2)) <= 0.02

    def test_kkt_and_feasibility(self, rng):
        x = rng.normal(size=(30, 5))
        y = np.clip(0.5 + 0.2 * x[:, 0] + rng.normal(0, 0.05, 30), 0, 1)
        params = SvrHyperParams(C=5.0, epsilon=0.02, gamma=0.2, tol=1e-6, max_passes=2000)
        model = train(x, y, params)
        assert model.converged
        assert np.all(np.abs(model.coef) <= params.C + 1e-12)
        assert abs(model.coef.sum()) < 1e-9
        assert kkt_violations(model, x, y).max() < 1e-5

    def test_deterministic(self, rng):
        x = rng.normal(size=(20, 40))
        y = rng.uniform(0, 1, 20)
        a, b = fit(x, y, seed=3), fit(x, y, seed=3)
        assert np.array_equal(a.coef, b.coef) and a.bias == b.bias

    def test_non_finite_rejected(self):
        x = np.zeros((3, 40))
        x[1, 4] = np.nan
        with pytest.raises(NonFiniteError):
            train(x, [0.1, 0.2, 0.3])

    def test_empty(self):
        with pytest.raises(InsufficientDataError):
            train(np.zeros((0, 40)), [])


class TestPredict:
    """Kernel expansion on hand-built models."""

    @pytest.fixture
    def two_vector_model(self):
        vectors = np.zeros((2, 40))
        vectors[1, :] = 100.0
        return SvrModel(vectors, np.array([0.3, -0.3]), 0.5, SvrHyperParams(), FeatureScaler.identity(40),
                        np.array([0, 1]))

    def test_at_support_vector(self, two_vector_model):
        assert predict(two_vector_model, np.zeros(40)) == pytest.approx(0.8)

    def test_far_away_gives_bias(self, two_vector_model):
        assert predict(two_vector_model, np.full(40, -1e3)) == pytest.approx(0.5)

    def test_not_clamped(self):
        model = SvrModel(np.zeros((1, 40)), np.array([2.0]), 0.0, SvrHyperParams(),
                         FeatureScaler.identity(40), np.array([0]))
        assert predict(model, np.zeros(40)) == pytest.approx(2.0)

    def test_wrong_dimension(self, two_vector_model):
        with pytest.raises(ShapeError):
            predict(two_vector_model, np.zeros(39))


class TestPredictSurCurve:
    """Per-qp predictions projected to a non-increasing curve."""

    @pytest.fixture
    def ramp_model(self):
        qps = np.arange(1, 52, 2)
        x = np.zeros((qps.size, 40))
        x[:, 0] = qps / 51.0
        model = fit(x, 1.0 - qps / 51.0, SvrHyperParams(C=100.0, epsilon=0.01, gamma=0.5, max_passes=1000))
        return model, qps

    @staticmethod
    def vectors(qps, first):
        out = []
        for q, v in zip(qps, first):
            x = np.zeros(40)
            x[0] = v
            out.append(FeatureVector(x, "src", int(q)))
        return out

    def test_decreasing_curve(self, ramp_model):
        model, qps = ramp_model
        curve = predict_sur_curve(model, self.vectors(qps, qps / 51.0))
        assert curve.provenance is Provenance.PREDICTED
        assert curve.is_monotone
        assert np.allclose(curve.values, 1.0 - qps / 51.0, atol=0.03)

    def test_blip_pooled_away(self, ramp_model):
        model, qps = ramp_model
        first = qps / 51.0
        first[10] = first[2]
        vectors = self.vectors(qps, first)
        raw = predict(model, np.stack([v.x for v in vectors]))
        assert raw[10] > raw[9]
        curve = predict_sur_curve(model, vectors)
        assert curve.is_monotone
        assert np.allclose(curve.values, monotone_project(raw, qps).values)

    def test_identical_features_constant_curve(self, ramp_model):
        model, qps = ramp_model
        curve = predict_sur_curve(model, self.vectors(qps, np.full(qps.size, 0.4)))
        assert np.allclose(curve.values, curve.values[0], rtol=0.0, atol=1e-12)

    def test_missing_qp(self, ramp_model):
        model, qps = ramp_model
        vectors = [v for v in self.vectors(qps, qps / 51.0) if v.qp != 11]
        with pytest.raises(MissingDataError) as info:
            predict_sur_curve(model, vectors, qps)
        assert info.value.missing == [11]


class TestGridSearch:
    """Inner cross-validation over (C, gamma, epsilon)."""

    def test_grouped_search(self, rng):
        groups = np.repeat(np.arange(8), 5)
        x = rng.normal(size=(40, 4))
        y = np.clip(0.5 + 0.2 * np.tanh(x[:, 0]), 0, 1)
        grid = {"C": [1.0, 10.0], "gamma": [0.1, 0.5], "epsilon": [0.02]}
        best, results = grid_search(x, y, groups, grid)
        assert len(results) == 4
        assert {r["C"] for r in results} == {1.0, 10.0}
        assert min(r["mae"] for r in results) == pytest.approx(
            next(r["mae"] for r in results if (r["C"], r["gamma"]) == (best.C, best.gamma)))

    def test_single_group_rejected(self, rng):
        with pytest.raises(InsufficientDataError):
            grid_search(rng.normal(size=(6, 4)), np.zeros(6), [0] * 6)


class TestModelFile:
    """JSON model persistence."""

    @pytest.fixture
    def model(self, rng):
        x = rng.normal(size=(25, 40))
        return fit(x, rng.uniform(0, 1, 25), metadata={"grid_search": False})

    def test_round_trip_exact(self, model, tmp_path, rng):
        path = str(tmp_path / "model.json")
        save_model(model, path)
        loaded = load_model(path)
        queries = rng.normal(size=(50, 40))
        assert np.array_equal(predict(model, queries), predict(loaded, queries))
        assert loaded.metadata["grid_search"] is False

    def test_round_trip_random_models(self, tmp_path):
        """Reloaded models predict exactly as before, over 100 random models."""
        rng = np.random.default_rng(42)
        path = str(tmp_path / "model.json")
        for _ in range(100):
            n, dim = int(rng.integers(2, 16)), int(rng.integers(1, 41))
            params = SvrHyperParams(C=float(rng.uniform(0.5, 50)), epsilon=float(rng.uniform(0, 0.1)),
                                    gamma=float(rng.uniform(0.01, 2.0)))
            model = fit(rng.normal(size=(n, dim)), rng.uniform(0, 1, n), params)
            save_model(model, path)
            queries = rng.normal(size=(10, dim)) * 2
            assert np.array_equal(predict(model, queries), predict(load_model(path), queries))

    def test_truncated_file(self, model, tmp_path):
        path = tmp_path / "model.json"
        save_model(model, str(path))
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(CorruptModelError):
            load_model(str(path))

    def test_unknown_version(self, model, tmp_path):
        path = tmp_path / "model.json"
        save_model(model, str(path))
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelVersionError):
            load_model(str(path))

    def test_not_a_model(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("[1, 2, 3]")
        with pytest.raises(CorruptModelError):
            load_model(str(path))

"""
epsilon-SVR with an RBF kernel, trained by sequential minimal optimization.

The dual is solved in the doubled form used by LIBSVM: 2n variables
a = [alpha; alpha*] with signs s = [+1; -1],

    min  1/2 a'Qa + p'a     s.t.  s'a = 0,  0 <= a <= C
    Q_ij = s_i s_j k(x_i, x_j),   p = [eps - y; eps + y]

Each step picks the maximal-violating pair and solves the two-variable
subproblem analytically.  Prediction is

    f(x) = sum_i (alpha_i - alpha*_i) k(x_i, x) + b,   k(u, v) = exp(-gamma |u - v|^2)

Model files are JSON:

    {"format": "sur-svr", "version": 1, "params": {...}, "scaler": {...},
     "support_vectors": [[...], ...], "coef": [...], "bias": ..., ...}
"""

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics.pairwise import rbf_kernel
from sklearn.model_selection import GroupKFold, KFold, ParameterGrid

from errors import (ConfigurationError, CorruptModelError, InsufficientDataError,
                    MissingDataError, ModelVersionError, NonFiniteError, ShapeError)
from features import FeatureVector
from sur_model import SurCurve, monotone_project

log = logging.getLogger(__name__)

MODEL_FORMAT = "sur-svr"
MODEL_VERSION = 1

DEFAULT_C = 10.0
DEFAULT_EPSILON = 0.02
DEFAULT_GAMMA = 1.0 / 40
DEFAULT_TOL = 1e-3
DEFAULT_MAX_PASSES = 100
TAU = 1e-12

DEFAULT_GRID = {
    "C": [1.0, 10.0, 100.0],
    "gamma": [0.0125, 0.025, 0.05],
    "epsilon": [0.01, 0.02, 0.05],
}
INNER_FOLDS = 4


@dataclass(frozen=True)
class SvrHyperParams:
    C: float = DEFAULT_C
    epsilon: float = DEFAULT_EPSILON
    gamma: float = DEFAULT_GAMMA
    tol: float = DEFAULT_TOL
    max_passes: int = DEFAULT_MAX_PASSES

    def __post_init__(self):
        if not self.C > 0:
            raise ConfigurationError(f"C must be > 0, got {self.C}")
        if not self.epsilon >= 0:
            raise ConfigurationError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.gamma > 0:
            raise ConfigurationError(f"gamma must be > 0, got {self.gamma}")
        if not self.tol > 0:
            raise ConfigurationError(f"tolerance must be > 0, got {self.tol}")
        if int(self.max_passes) != self.max_passes or self.max_passes < 1:
            raise ConfigurationError(f"max_passes must be a positive integer, got {self.max_passes}")


@dataclass(frozen=True)
class FeatureScaler:
    """Standardisation fitted on training data; zero-variance dims are only shifted."""

    mean: np.ndarray
    std: np.ndarray
    zero_variance: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.zero_variance is None:
            object.__setattr__(self, "zero_variance", np.zeros(self.mean.shape, dtype=bool))

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ShapeError(f"expected {self.dim}-D features, got {x.shape[-1]}-D")
        return (x - self.mean) / self.std

    @classmethod
    def identity(cls, dim: int) -> "FeatureScaler":
        return cls(np.zeros(dim), np.ones(dim))


def fit_scaler(features: np.ndarray) -> FeatureScaler:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError(f"scaler needs at least two samples, got {x.shape[0] if x.ndim else 0}")
    _check_finite(x, "training features")
    std = x.std(axis=0, ddof=1)
    flat = std == 0
    return FeatureScaler(x.mean(axis=0), np.where(flat, 1.0, std), flat)


@dataclass(frozen=True)
class SvrModel:
    support_vectors: np.ndarray     # scaled space
    coef: np.ndarray                # alpha - alpha* per support vector
    bias: float
    params: SvrHyperParams
    scaler: FeatureScaler
    support_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    iterations: int = 0
    converged: bool = True
    objective: float = 0.0
    metadata: Mapping[str, Any] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.scaler.dim


@dataclass(frozen=True)
class DualSolution:
    alpha: np.ndarray
    alpha_star: np.ndarray
    rho: float
    iterations: int
    converged: bool
    objective: float

    @property
    def beta(self) -> np.ndarray:
        return self.alpha - self.alpha_star


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contain NaN or infinity")


# ---------------------------------------------------------------------------
# SMO
# ---------------------------------------------------------------------------
def _rho(a: np.ndarray, grad: np.ndarray, s: np.ndarray, C: float) -> float:
    y_grad = s * grad
    at_upper = a >= C
    at_lower = a <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(y_grad[free].mean())
    # bounded variables only: midpoint of the feasible interval
    ub_mask = (at_upper & (s < 0)) | (at_lower & (s > 0))
    lb_mask = (at_upper & (s > 0)) | (at_lower & (s < 0))
    ub = y_grad[ub_mask].min() if ub_mask.any() else np.inf
    lb = y_grad[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2)


def solve_dual(kernel: np.ndarray, targets: np.ndarray, params: SvrHyperParams) -> DualSolution:
    """SMO on the doubled epsilon-SVR dual for a precomputed kernel matrix."""
    y = np.asarray(targets, dtype=np.float64)
    n = y.size
    C = params.C
    s = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([params.epsilon - y, params.epsilon + y])
    row = np.concatenate([np.arange(n), np.arange(n)])
    diag = kernel[row, row]

    a = np.zeros(2 * n)
    grad = p.copy()
    max_iter = params.max_passes * 2 * n
    converged = False
    it = 0
    while it < max_iter:
        minus_yg = -s * grad
        up = np.where(s > 0, a < C, a > 0)
        low = np.where(s > 0, a > 0, a < C)
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, minus_yg, -np.inf)))
        j = int(np.argmin(np.where(low, minus_yg, np.inf)))
        if minus_yg[i] - minus_yg[j] < params.tol:
            converged = True
            break
        it += 1

        q_i = s[i] * s * kernel[row[i]][row]
        q_j = s[j] * s * kernel[row[j]][row]
        old_i, old_j = a[i], a[j]

        if s[i] != s[j]:
            quad = diag[i] + diag[j] + 2 * q_i[j]
            delta = (-grad[i] - grad[j]) / max(quad, TAU)
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j], a[i] = 0.0, diff
            elif a[i] < 0:
                a[i], a[j] = 0.0, -diff
            if diff > 0:
                if a[i] > C:
                    a[i], a[j] = C, C - diff
            elif a[j] > C:
                a[j], a[i] = C, C + diff
        else:
            quad = diag[i] + diag[j] - 2 * q_i[j]
            delta = (grad[i] - grad[j]) / max(quad, TAU)
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i], a[j] = C, total - C
            elif a[j] < 0:
                a[j], a[i] = 0.0, total
            if total > C:
                if a[j] > C:
                    a[j], a[i] = C, total - C
            elif a[i] < 0:
                a[i], a[j] = 0.0, total

        grad += q_i * (a[i] - old_i) + q_j * (a[j] - old_j)

    if not converged:
        log.warning("SMO stopped after %d iterations without reaching tol=%g", it, params.tol)
    return DualSolution(
        alpha=a[:n].copy(),
        alpha_star=a[n:].copy(),
        rho=_rho(a, grad, s, C),
        iterations=it,
        converged=converged,
        objective=float(0.5 * a @ (grad + p)),
    )


def dual_objective(kernel: np.ndarray, targets: np.ndarray, alpha: np.ndarray,
                   alpha_star: np.ndarray, epsilon: float) -> float:
    """Value of the (minimised) dual at (alpha, alpha*)."""
    beta = alpha - alpha_star
    return float(0.5 * beta @ kernel @ beta + epsilon * np.sum(alpha + alpha_star)
                 - np.asarray(targets) @ beta)


# ---------------------------------------------------------------------------
# training / prediction
# ---------------------------------------------------------------------------
def train(samples: np.ndarray, targets: Sequence[float], params: SvrHyperParams = SvrHyperParams(),
          seed: int = 0, scaler: Optional[FeatureScaler] = None,
          metadata: Optional[Mapping[str, Any]] = None) -> SvrModel:
    """Fit on already-scaled samples.  `scaler` is stored with the model for predict()."""
    x = np.asarray(samples, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise InsufficientDataError("training set is empty")
    if y.shape != (x.shape[0],):
        raise ShapeError(f"{x.shape[0]} samples but {y.size} targets")
    _check_finite(x, "training samples")
    _check_finite(y, "training targets")
    scaler = scaler or FeatureScaler.identity(x.shape[1])

    solution = solve_dual(rbf_kernel(x, x, gamma=params.gamma), y, params)
    beta = solution.beta
    support = np.flatnonzero(beta != 0)
    meta = {"seed": seed, "samples": int(x.shape[0])}
    meta.update(metadata or {})
    log.debug("SVR: %d samples, %d support vectors, %d iterations",
              x.shape[0], support.size, solution.iterations)
    return SvrModel(
        support_vectors=x[support],
        coef=beta[support],
        bias=-solution.rho,
        params=params,
        scaler=scaler,
        support_indices=support,
        iterations=solution.iterations,
        converged=solution.converged,
        objective=solution.objective,
        metadata=meta,
    )


def fit(features: np.ndarray, targets: Sequence[float], params: SvrHyperParams = SvrHyperParams(),
        seed: int = 0, metadata: Optional[Mapping[str, Any]] = None) -> SvrModel:
    """fit_scaler + train on raw features."""
    scaler = fit_scaler(features)
    return train(scaler.transform(features), targets, params, seed, scaler, metadata)


def decision(model: SvrModel, scaled: np.ndarray) -> np.ndarray:
    scaled = np.atleast_2d(np.asarray(scaled, dtype=np.float64))
    if model.coef.size == 0:
        return np.full(scaled.shape[0], model.bias)
    k = rbf_kernel(scaled, model.support_vectors, gamma=model.params.gamma)
    return k @ model.coef + model.bias


def predict(model: SvrModel, x: np.ndarray):
    """Raw prediction(s) for 40-D feature(s); not clamped."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != model.dim:
        raise ShapeError(f"model expects {model.dim}-D features, got shape {x.shape}")
    _check_finite(x, "features")
    out = decision(model, model.scaler.transform(x))
    return float(out[0]) if x.ndim == 1 else out


def kkt_violations(model: SvrModel, samples: np.ndarray, targets: Sequence[float]) -> np.ndarray:
    """Per-point violation of the epsilon-SVR optimality conditions (scaled samples)."""
    x = np.asarray(samples, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    eps, C = model.params.epsilon, model.params.C
    beta = np.zeros(y.size)
    beta[model.support_indices] = model.coef
    r = y - decision(model, x)

    edge = C * (1 - 1e-12)
    out = np.maximum(0.0, np.abs(r) - eps)                 # beta == 0: inside the tube
    upper, lower = beta >= edge, beta <= -edge
    free_pos = (beta > 0) & ~upper
    free_neg = (beta < 0) & ~lower
    out[upper] = np.maximum(0.0, eps - r[upper])
    out[lower] = np.maximum(0.0, r[lower] + eps)
    out[free_pos] = np.abs(r[free_pos] - eps)
    out[free_neg] = np.abs(r[free_neg] + eps)
    return out


def predict_sur_curve(model: SvrModel, features: Sequence[FeatureVector],
                      qps: Optional[Sequence[int]] = None) -> SurCurve:
    """Predicted SUR per qp, projected onto non-increasing curves."""
    by_qp = {f.qp: f for f in features}
    grid = sorted(by_qp) if qps is None else [int(q) for q in qps]
    gaps = [q for q in grid if q not in by_qp]
    if gaps:
        sources = sorted({f.source_id for f in features}) or ["?"]
        raise MissingDataError(f"{','.join(sources)}: no features at qp {gaps}", missing=gaps)
    if not grid:
        raise MissingDataError("no features to predict from")
    raw = predict(model, np.stack([by_qp[q].x for q in grid]))
    return monotone_project(raw, grid)


# ---------------------------------------------------------------------------
# hyperparameter search
# ---------------------------------------------------------------------------
def _cv_error(x, y, splits, params: SvrHyperParams, seed: int) -> float:
    errors = []
    for train_idx, test_idx in splits:
        model = fit(x[train_idx], y[train_idx], params, seed)
        errors.append(np.mean(np.abs(predict(model, x[test_idx]) - y[test_idx])))
    return float(np.mean(errors))


def grid_search(features: np.ndarray, targets: Sequence[float], groups: Optional[Sequence] = None,
                grid: Mapping[str, Sequence[float]] = DEFAULT_GRID,
                base: SvrHyperParams = SvrHyperParams(), folds: int = INNER_FOLDS,
                seed: int = 0, n_jobs: int = 1) -> Tuple[SvrHyperParams, List[Dict[str, float]]]:
    """Pick (C, gamma, epsilon) by inner cross-validated MAE.

    With `groups`, samples sharing a group (a source) never straddle a split.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if groups is not None:
        n_groups = len(set(groups))
        if n_groups < 2:
            raise InsufficientDataError("grid search needs at least two sources")
        splits = list(GroupKFold(n_splits=min(folds, n_groups)).split(x, y, groups))
    else:
        if x.shape[0] < 4:
            raise InsufficientDataError("grid search needs at least four samples")
        splits = list(KFold(n_splits=min(folds, x.shape[0] // 2), shuffle=True,
                            random_state=seed).split(x))

    candidates = [replace(base, **{k: float(v) for k, v in combo.items()})
                  for combo in ParameterGrid(dict(grid))]
    scores = Parallel(n_jobs=n_jobs)(
        delayed(_cv_error)(x, y, splits, params, seed) for params in candidates)

    results = [{"C": c.C, "gamma": c.gamma, "epsilon": c.epsilon, "mae": s}
               for c, s in zip(candidates, scores)]
    best = int(np.argmin(scores))
    log.info("grid search: C=%g gamma=%g epsilon=%g (inner MAE %.4f)",
             candidates[best].C, candidates[best].gamma, candidates[best].epsilon, scores[best])
    return candidates[best], results


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------
def model_to_dict(model: SvrModel) -> Dict[str, Any]:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "params": asdict(model.params),
        "scaler": {"mean": model.scaler.mean.tolist(), "std": model.scaler.std.tolist(),
                   "zero_variance": model.scaler.zero_variance.tolist()},
        "support_vectors": model.support_vectors.tolist(),
        "coef": model.coef.tolist(),
        "bias": float(model.bias),
        "support_indices": [int(i) for i in model.support_indices],
        "iterations": int(model.iterations),
        "converged": bool(model.converged),
        "objective": float(model.objective),
        "metadata": dict(model.metadata),
    }


def model_from_dict(doc: Mapping[str, Any]) -> SvrModel:
    if not isinstance(doc, Mapping) or doc.get("format") != MODEL_FORMAT:
        raise CorruptModelError("not a SUR SVR model file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelVersionError(f"model version {doc.get('version')!r} not supported "
                                f"(expected {MODEL_VERSION})")
    try:
        scaler = FeatureScaler(np.asarray(doc["scaler"]["mean"], dtype=np.float64),
                               np.asarray(doc["scaler"]["std"], dtype=np.float64),
                               np.asarray(doc["scaler"].get("zero_variance",
                                                            [False] * len(doc["scaler"]["mean"])),
                                          dtype=bool))
        dim = scaler.dim
        vectors = np.asarray(doc["support_vectors"], dtype=np.float64).reshape(-1, dim)
        coef = np.asarray(doc["coef"], dtype=np.float64)
        if coef.shape != (vectors.shape[0],) or scaler.std.shape != (dim,):
            raise CorruptModelError("model arrays have inconsistent shapes")
        return SvrModel(
            support_vectors=vectors,
            coef=coef,
            bias=float(doc["bias"]),
            params=SvrHyperParams(**doc["params"]),
            scaler=scaler,
            support_indices=np.asarray(doc.get("support_indices", []), dtype=int),
            iterations=int(doc.get("iterations", 0)),
            converged=bool(doc.get("converged", True)),
            objective=float(doc.get("objective", 0.0)),
            metadata=doc.get("metadata", {}),
        )
    except (KeyError, TypeError, ValueError, ConfigurationError) as exc:
        raise CorruptModelError(f"malformed model: {exc}") from None


def save_model(model: SvrModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model), f, indent=1)
        f.write("\n")


def load_model(path: str) -> SvrModel:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise CorruptModelError(f"{path}: corrupt model file ({exc.msg} at line {exc.lineno})") from None
    except UnicodeDecodeError:
        raise CorruptModelError(f"{path}: model file is not UTF-8 text") from None
    return model_from_dict(doc)

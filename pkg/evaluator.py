"""
Cross-validated evaluation of the SUR predictor.

Sources are grouped by resolution tag; each group is split into k folds by
source id, a model is trained on every training split and the test split's
SUR curves are predicted and compared with ground truth:

    dSUR  mean over the qp grid of |S_pred - S_truth|
    dQP   |predicted JND - ground-truth JND| at the threshold (0.75)

Ground truth comes from the Gaussian fit of each source's annotations; the
empirical curve can be used instead (truth_rule="empirical").  Sources whose
annotations have zero spread are excluded with a logged reason.
"""

import logging
import math
import os
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import KFold

from errors import (BatchError, ConfigurationError, DegenerateSampleError, ItemFailure,
                    MissingDataError, ShapeError, SurPredictError)
from feature_cache import FeatureCache, fingerprint
from features import FEATURE_REVISION, FeatureVector, SlopeParams, extract_source_features
from manifest import DatasetManifest, SourceEntry, annotations_for
from media_io import REFERENCE, Clip, ClipRole, load_clip
from quality_index import MetricId, ScoreTable, load_score_table, make_metric
from segmenter import SegmentConfig, layout as segment_layout
from sur_model import (DEFAULT_THRESHOLD, JndAnnotationSet, SurCurve,
                       analytic_jnd, empirical_curve, fit_gaussian, gaussian_curve,
                       jnd_point, monotone_project)
from svr import DEFAULT_GRID, SvrHyperParams, SvrModel, fit, grid_search, predict_sur_curve
from synthetic import degrade

log = logging.getLogger(__name__)

DEFAULT_FOLDS = 5
DEFAULT_FOLD_SEED = 2017
ALL_COLUMN = "all"
TRUTH_RULES = ("gaussian", "empirical")


@dataclass(frozen=True)
class EvaluationConfig:
    folds: int = DEFAULT_FOLDS
    fold_seed: int = DEFAULT_FOLD_SEED
    svr_seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    truth_rule: str = "gaussian"
    params: SvrHyperParams = SvrHyperParams()
    grid_search: bool = False
    grid: Mapping[str, Sequence[float]] = field(default_factory=lambda: dict(DEFAULT_GRID))
    metric: str = MetricId.PSNR_MAPPED.value
    segment: SegmentConfig = SegmentConfig()
    slope: SlopeParams = SlopeParams()
    cache_dir: Optional[str] = None
    scores: Optional[str] = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.folds < 1:
            raise ConfigurationError(f"folds must be >= 1, got {self.folds}")
        if self.truth_rule not in TRUTH_RULES:
            raise ConfigurationError(f"truth rule must be one of {TRUTH_RULES}, got {self.truth_rule!r}")
        if not 0 < self.threshold < 1:
            raise ConfigurationError(f"threshold must be in (0, 1), got {self.threshold}")

    def feature_settings(self) -> Dict[str, Any]:
        return {"metric": self.metric, "segment": asdict(self.segment), "slope": asdict(self.slope),
                "feature_revision": FEATURE_REVISION}


# ---------------------------------------------------------------------------
# folds and metrics
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    folds: Tuple[Tuple[Tuple[str, ...], Tuple[str, ...]], ...]     # (train ids, test ids)

    def test_fold_of(self, source_id: str) -> int:
        for n, (_, test) in enumerate(self.folds):
            if source_id in test:
                return n
        raise KeyError(source_id)


def plan_folds(source_ids: Sequence[str], k: int = DEFAULT_FOLDS, seed: int = DEFAULT_FOLD_SEED) -> FoldPlan:
    """Seeded k-way partition of sources.  k=1 trains and tests on everything."""
    ids = sorted(set(source_ids))
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    if len(ids) < k:
        raise ConfigurationError(f"{k} folds need at least {k} sources, got {len(ids)}")
    if k == 1:
        return FoldPlan(1, seed, ((tuple(ids), tuple(ids)),))
    splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
    folds = tuple(
        (tuple(ids[i] for i in train), tuple(ids[i] for i in test))
        for train, test in splitter.split(np.arange(len(ids)))
    )
    return FoldPlan(k, seed, folds)


def delta_sur(predicted: SurCurve, truth: SurCurve) -> float:
    if predicted.qps.shape != truth.qps.shape or np.any(predicted.qps != truth.qps):
        raise ShapeError(f"qp grids differ: {predicted.qps.tolist()} vs {truth.qps.tolist()}")
    return float(np.mean(np.abs(predicted.values - truth.values)))


def delta_qp(predicted: float, truth: float) -> Optional[float]:
    """|predicted - truth|, or None when either side is beyond the grid."""
    if not (math.isfinite(predicted) and math.isfinite(truth)):
        return None
    return abs(predicted - truth)


def ground_truth(annotations: JndAnnotationSet, qps: Sequence[int], rule: str = "gaussian",
                 threshold: float = DEFAULT_THRESHOLD) -> Tuple[SurCurve, float]:
    """Truth curve on the grid plus the truth JND location."""
    if rule == "gaussian":
        model = fit_gaussian(annotations)
        return gaussian_curve(model, qps), analytic_jnd(model, threshold)
    fit_gaussian(annotations)       # degenerate sets are excluded under either rule
    curve = empirical_curve(annotations, qps)
    if not curve.is_monotone:
        curve = monotone_project(curve.values, curve.qps)
    return curve, jnd_point(curve, threshold)


# ---------------------------------------------------------------------------
# features per source
# ---------------------------------------------------------------------------
def coded_source(entry: SourceEntry, reference: Clip) -> Callable[[int], Clip]:
    """qp -> coded clip, read from disk or rebuilt from the degradation recipe."""
    if entry.coded:
        def from_disk(qp: int) -> Clip:
            return load_clip(entry.coded[qp], ClipRole.coded(qp), entry.source_id)
        return from_disk

    def from_recipe(qp: int) -> Clip:
        return degrade(reference, qp, entry.degradation)
    return from_recipe


def score_table_path(manifest: DatasetManifest, config: EvaluationConfig) -> Optional[str]:
    return config.scores or manifest.scores


def source_inputs(entry: SourceEntry, manifest: DatasetManifest, config: EvaluationConfig) -> List[str]:
    paths = [entry.reference] + [entry.coded[q] for q in sorted(entry.coded)]
    scores = score_table_path(manifest, config)
    if scores and MetricId.parse(config.metric) is MetricId.EXTERNAL:
        paths.append(scores)
    return paths


def source_fingerprint(entry: SourceEntry, manifest: DatasetManifest, config: EvaluationConfig) -> str:
    settings = config.feature_settings()
    settings["qp_grid"] = list(manifest.qp_grid)
    settings["degradation"] = dict(entry.degradation or {})
    return fingerprint(source_inputs(entry, manifest, config), settings)


def source_features(entry: SourceEntry, qps: Sequence[int], config: EvaluationConfig,
                    table: Optional[ScoreTable] = None) -> List[FeatureVector]:
    reference = load_clip(entry.reference, REFERENCE, entry.source_id)
    grid = segment_layout(reference.metadata, config.segment)
    metric = make_metric(config.metric, table)
    return extract_source_features(reference, coded_source(entry, reference), qps, grid,
                                   metric, config.slope, entry.source_id)


def _guarded_features(entry, qps, config, table):
    try:
        return entry.source_id, source_features(entry, qps, config, table), None
    except SurPredictError as exc:
        return entry.source_id, None, exc


def load_table(manifest: DatasetManifest, config: EvaluationConfig) -> Optional[ScoreTable]:
    if MetricId.parse(config.metric) is not MetricId.EXTERNAL:
        return None
    path = score_table_path(manifest, config)
    if not path:
        raise ConfigurationError("metric 'external' needs --scores or a 'scores' table in the manifest")
    if not os.path.exists(path):
        raise ConfigurationError(f"score table not found: {path}")
    return load_score_table(path)


def prepare_features(manifest: DatasetManifest, config: EvaluationConfig,
                     source_ids: Optional[Sequence[str]] = None) -> Tuple[Dict[str, List[FeatureVector]], int]:
    """Feature vectors for every requested source, through the cache when one is set.

    Returns (vectors by source id, number of sources recomputed).  Failures are
    collected across sources and raised together as one BatchError.
    """
    wanted = [manifest.source(s) for s in (source_ids or manifest.source_ids)]
    table = load_table(manifest, config)
    out: Dict[str, List[FeatureVector]] = {}
    failures: List[ItemFailure] = []

    with (FeatureCache(config.cache_dir) if config.cache_dir else nullcontext()) as cache:
        if cache is None:
            stale, digests = wanted, {}
        else:
            digests = {e.source_id: source_fingerprint(e, manifest, config) for e in wanted}
            stale = []
            for e in wanted:
                if cache.is_fresh(e.source_id, digests[e.source_id], manifest.qp_grid):
                    out[e.source_id] = cache.get(e.source_id, manifest.qp_grid)
                else:
                    stale.append(e)
            log.info("feature cache: %d fresh, %d to compute", len(wanted) - len(stale), len(stale))

        results = Parallel(n_jobs=config.n_jobs)(
            delayed(_guarded_features)(e, manifest.qp_grid, config, table) for e in stale)
        for source_id, vectors, error in results:
            if error is not None:
                failures.append(ItemFailure(source_id, error))
                continue
            out[source_id] = vectors
            if cache is not None:
                cache.put(source_id, digests[source_id], vectors)

    if failures:
        raise BatchError("feature extraction", failures)
    return out, len(stale)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SourceResult:
    source_id: str
    resolution: str
    fold: int
    delta_sur: float
    delta_qp: Optional[float]
    jnd_predicted: float
    jnd_truth: float
    predicted: SurCurve = field(repr=False, compare=False)
    truth: SurCurve = field(repr=False, compare=False)


@dataclass(frozen=True)
class Aggregate:
    sources: int
    delta_sur: float
    delta_qp: float
    beyond_grid: int


def aggregate(rows: Sequence[SourceResult]) -> Aggregate:
    finite = [r.delta_qp for r in rows if r.delta_qp is not None]
    return Aggregate(
        sources=len(rows),
        delta_sur=float(np.mean([r.delta_sur for r in rows])) if rows else math.nan,
        delta_qp=float(np.mean(finite)) if finite else math.nan,
        beyond_grid=len(rows) - len(finite),
    )


@dataclass(frozen=True)
class EvaluationReport:
    rows: Tuple[SourceResult, ...]
    excluded: Mapping[str, str]
    truth_rule: str
    config: Mapping[str, Any]
    fold_params: Mapping[str, Tuple[Dict[str, float], ...]] = field(default_factory=dict)

    @property
    def resolutions(self) -> List[str]:
        return sorted({r.resolution for r in self.rows})

    def aggregates(self) -> Dict[str, Aggregate]:
        """One column per resolution tag plus 'all', each the mean over its sources."""
        out = {res: aggregate([r for r in self.rows if r.resolution == res]) for res in self.resolutions}
        out[ALL_COLUMN] = aggregate(self.rows)
        return out

    def jnd_pairs(self) -> List[Tuple[float, float]]:
        """(truth, predicted) JND pairs with both sides on the grid."""
        return [(r.jnd_truth, r.jnd_predicted) for r in self.rows if r.delta_qp is not None]


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------
def training_set(features: Mapping[str, Sequence[FeatureVector]], truths: Mapping[str, SurCurve],
                 ids: Sequence[str]) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    x, y, groups = [], [], []
    for sid in ids:
        curve = truths[sid]
        for v in features[sid]:
            x.append(v.x)
            y.append(curve.at(v.qp))
            groups.append(sid)
    if not x:
        raise MissingDataError("training split has no feature vectors")
    return np.stack(x), np.asarray(y), groups


def train_split(features, truths, ids: Sequence[str], config: EvaluationConfig,
                metadata: Optional[Mapping[str, Any]] = None) -> SvrModel:
    x, y, groups = training_set(features, truths, ids)
    params = config.params
    meta = dict(metadata or {})
    if config.grid_search:
        params, results = grid_search(x, y, groups, config.grid, config.params, seed=config.svr_seed)
        meta["grid_search"] = results
    meta["params"] = asdict(params)
    return fit(x, y, params, config.svr_seed, meta)


def _run_fold(n, train_ids, test_ids, features, truths, truth_jnds, resolutions, qps,
              config: EvaluationConfig):
    model = train_split(features, truths, train_ids, config, {"fold": n})
    rows = []
    for sid in test_ids:
        predicted = predict_sur_curve(model, features[sid], qps)
        jnd_pred = jnd_point(predicted, config.threshold)
        rows.append(SourceResult(
            source_id=sid,
            resolution=resolutions[sid],
            fold=n,
            delta_sur=delta_sur(predicted, truths[sid]),
            delta_qp=delta_qp(jnd_pred, truth_jnds[sid]),
            jnd_predicted=jnd_pred,
            jnd_truth=truth_jnds[sid],
            predicted=predicted,
            truth=truths[sid],
        ))
    return rows, {"C": model.params.C, "gamma": model.params.gamma, "epsilon": model.params.epsilon}


def preflight(manifest: DatasetManifest, config: EvaluationConfig) -> Dict[str, JndAnnotationSet]:
    """Every referenced file exists and every source has annotations."""
    failures = []
    for s in manifest.sources:
        for path in [s.reference] + [s.coded[q] for q in sorted(s.coded)]:
            if not os.path.exists(path):
                failures.append(ItemFailure(s.source_id, MissingDataError(f"file not found: {path}")))
    scores = score_table_path(manifest, config)
    if MetricId.parse(config.metric) is MetricId.EXTERNAL and not (scores and os.path.exists(scores)):
        failures.append(ItemFailure("scores", MissingDataError(f"score table not found: {scores}")))
    try:
        sets = annotations_for(manifest)
    except SurPredictError as exc:
        failures.append(ItemFailure("annotations", exc))
        sets = {}
    if failures:
        raise BatchError("evaluation preflight", failures)
    return sets


def run_evaluation(manifest: DatasetManifest, config: EvaluationConfig = EvaluationConfig(),
                   features: Optional[Mapping[str, Sequence[FeatureVector]]] = None) -> EvaluationReport:
    annotations = preflight(manifest, config)
    qps = list(manifest.qp_grid)

    truths: Dict[str, SurCurve] = {}
    truth_jnds: Dict[str, float] = {}
    excluded: Dict[str, str] = {}
    for sid in manifest.source_ids:
        try:
            truths[sid], truth_jnds[sid] = ground_truth(annotations[sid], qps, config.truth_rule,
                                                       config.threshold)
        except DegenerateSampleError as exc:
            log.warning("excluding %s: %s", sid, exc)
            excluded[sid] = str(exc)
    kept = [sid for sid in manifest.source_ids if sid in truths]

    if features is None:
        features, _ = prepare_features(manifest, config, kept)
    missing = [sid for sid in kept if sid not in features]
    if missing:
        raise MissingDataError(f"no features for: {', '.join(missing)}", missing=missing)

    resolutions = {s.source_id: s.resolution for s in manifest.sources}
    groups: Dict[str, List[str]] = {}
    for sid in kept:
        groups.setdefault(resolutions[sid], []).append(sid)

    jobs = []
    for res in sorted(groups):
        plan = plan_folds(groups[res], config.folds, config.fold_seed)
        log.info("resolution %s: %d sources, %d folds", res or "(untagged)", len(groups[res]), plan.k)
        for n, (train_ids, test_ids) in enumerate(plan.folds):
            jobs.append((res, n, train_ids, test_ids))

    outcomes = Parallel(n_jobs=config.n_jobs)(
        delayed(_run_fold)(n, train_ids, test_ids, features, truths, truth_jnds, resolutions, qps, config)
        for _, n, train_ids, test_ids in jobs)

    rows: List[SourceResult] = []
    fold_params: Dict[str, List[Dict[str, float]]] = {}
    for (res, _, _, _), (fold_rows, params) in zip(jobs, outcomes):
        rows.extend(fold_rows)
        fold_params.setdefault(res, []).append(params)
    rows.sort(key=lambda r: r.source_id)

    echo = {
        "folds": config.folds,
        "fold_seed": config.fold_seed,
        "svr_seed": config.svr_seed,
        "threshold": config.threshold,
        "truth_rule": config.truth_rule,
        "grid_search": config.grid_search,
        "params": asdict(config.params),
        "qp_grid": qps,
        "manifest": manifest.name,
        **config.feature_settings(),
    }
    report = EvaluationReport(tuple(rows), dict(sorted(excluded.items())), config.truth_rule, echo,
                              {k: tuple(v) for k, v in fold_params.items()})
    overall = report.aggregates()[ALL_COLUMN]
    log.info("evaluation: %d sources, dSUR %.4f, dQP %.3f (%d beyond grid, %d excluded)",
             overall.sources, overall.delta_sur, overall.delta_qp, overall.beyond_grid, len(excluded))
    return report

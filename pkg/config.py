"""
Run configuration for sur_predict.py.

Precedence: built-in defaults < JSON file given with --config < command-line
flags.  The resolved configuration is validated before any output is
written and is echoed into every output directory as run_config.json.

Example run.json:

    {"manifest": "data/manifest.json", "metric": "struct_sim",
     "grid_search": true, "folds": 5, "n_jobs": 4}
"""

import json
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Mapping, Optional

from errors import ConfigurationError
from evaluator import DEFAULT_FOLD_SEED, DEFAULT_FOLDS, TRUTH_RULES, EvaluationConfig
from features import DEFAULT_K, DEFAULT_P, SlopeParams
from quality_index import MetricId
from segmenter import (DEFAULT_SEG_DURATION, DEFAULT_SEG_HEIGHT, DEFAULT_SEG_WIDTH,
                       DEFAULT_SPATIAL_OVERLAP, SegmentConfig)
from sur_model import DEFAULT_THRESHOLD
from svr import (DEFAULT_C, DEFAULT_EPSILON, DEFAULT_GAMMA, DEFAULT_MAX_PASSES, DEFAULT_TOL,
                 SvrHyperParams)
from synthetic import DEFAULT_SEED, SyntheticConfig

RUN_CONFIG_NAME = "run_config.json"


@dataclass(frozen=True)
class RunConfig:
    subcommand: str = ""
    manifest: Optional[str] = None
    metric: str = MetricId.PSNR_MAPPED.value

    # segments
    seg_width: int = DEFAULT_SEG_WIDTH
    seg_height: int = DEFAULT_SEG_HEIGHT
    seg_duration: float = DEFAULT_SEG_DURATION
    spatial_overlap: float = DEFAULT_SPATIAL_OVERLAP

    # slope / selection
    k: int = DEFAULT_K
    p: float = DEFAULT_P

    # regressor
    C: float = DEFAULT_C
    epsilon: float = DEFAULT_EPSILON
    gamma: float = DEFAULT_GAMMA
    tol: float = DEFAULT_TOL
    max_passes: int = DEFAULT_MAX_PASSES
    grid_search: bool = False

    # evaluation
    folds: int = DEFAULT_FOLDS
    threshold: float = DEFAULT_THRESHOLD
    truth_rule: str = "gaussian"

    # seeds
    fold_seed: int = DEFAULT_FOLD_SEED
    svr_seed: int = 0
    synth_seed: int = DEFAULT_SEED

    # paths
    cache_dir: str = "cache"
    out_dir: str = "out"
    model: Optional[str] = None
    source: Optional[str] = None
    annotations: Optional[str] = None
    scores: Optional[str] = None

    # synthetic datasets
    synth_sources: int = 40
    synth_width: int = 640
    synth_height: int = 360
    synth_duration: float = 2.0
    synth_frame_rate: int = 10
    synth_qp_step: int = 2

    n_jobs: int = 1

    def __post_init__(self):
        MetricId.parse(self.metric)
        if self.truth_rule not in TRUTH_RULES:
            raise ConfigurationError(f"truth rule must be one of {TRUTH_RULES}, got {self.truth_rule!r}")
        if self.n_jobs == 0:
            raise ConfigurationError("n_jobs must be non-zero (use -1 for all cores)")
        if self.synth_qp_step < 1:
            raise ConfigurationError(f"synthetic qp step must be >= 1, got {self.synth_qp_step}")
        for name in INPUT_FIELDS:
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                raise ConfigurationError(f"{name} not found: {path}")
        # sub-configs validate their own ranges
        self.segment_config()
        self.slope_params()
        self.svr_params()
        self.evaluation_config()

    def segment_config(self) -> SegmentConfig:
        return SegmentConfig(self.seg_width, self.seg_height, self.seg_duration, self.spatial_overlap)

    def slope_params(self) -> SlopeParams:
        return SlopeParams(self.k, self.p)

    def svr_params(self) -> SvrHyperParams:
        return SvrHyperParams(self.C, self.epsilon, self.gamma, self.tol, self.max_passes)

    def evaluation_config(self) -> EvaluationConfig:
        return EvaluationConfig(
            folds=self.folds,
            fold_seed=self.fold_seed,
            svr_seed=self.svr_seed,
            threshold=self.threshold,
            truth_rule=self.truth_rule,
            params=self.svr_params(),
            grid_search=self.grid_search,
            metric=MetricId.parse(self.metric).value,
            segment=self.segment_config(),
            slope=self.slope_params(),
            cache_dir=self.cache_dir,
            scores=self.scores,
            n_jobs=self.n_jobs,
        )

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(
            sources=self.synth_sources,
            width=self.synth_width,
            height=self.synth_height,
            duration=self.synth_duration,
            frame_rate=self.synth_frame_rate,
            qp_grid=tuple(range(1, 52, self.synth_qp_step)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def require(self, *names: str) -> None:
        """Named fields must be set; path-valued ones must exist."""
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigurationError(f"--{name.replace('_', '-')} is required for {self.subcommand}")
            if name in PATH_FIELDS and not os.path.exists(value):
                raise ConfigurationError(f"{name} not found: {value}")


PATH_FIELDS = {"manifest", "model", "annotations", "scores"}
INPUT_FIELDS = ("manifest", "annotations", "scores")
FIELD_NAMES = {f.name for f in fields(RunConfig)}


def load_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: JSON parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: config root should be an object")
    unknown = sorted(set(doc) - FIELD_NAMES)
    if unknown:
        raise ConfigurationError(f"{path}: unknown config keys {unknown}")
    return doc


def resolve(overrides: Mapping[str, Any], config_file: Optional[str] = None) -> RunConfig:
    """Defaults, then the config file, then every override that is not None."""
    values: Dict[str, Any] = {}
    if config_file:
        values.update(load_config_file(config_file))
    values.update({k: v for k, v in overrides.items() if v is not None and k in FIELD_NAMES})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigurationError(f"bad configuration value: {exc}") from None


def write_run_config(config: RunConfig, out_dir: str, extra: Optional[Mapping[str, Any]] = None) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, RUN_CONFIG_NAME)
    doc = config.to_dict()
    doc.update(extra or {})
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return path

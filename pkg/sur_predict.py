#!/usr/bin/env python3
"""
SUR / JND prediction from the command line.

Subcommands:
    extract-features   40-D feature vectors for every (source, qp) into the cache
    train              fit the SVR on cached features and ground-truth SUR values
    predict            SUR curve and JND point of one source with a trained model
    evaluate           k-fold cross-validation with dSUR / dQP reports
    synth              write a synthetic dataset (clips, annotations, manifest)
    sur-fit            Gaussian SUR model of annotation files
    validate           check a manifest and everything it points at

Usage:
    python3 sur_predict.py synth --out-dir data/synth
    python3 sur_predict.py extract-features --manifest data/synth/manifest.json
    python3 sur_predict.py evaluate --manifest data/synth/manifest.json --out-dir out/eval
    python3 sur_predict.py train --manifest data/synth/manifest.json --model out/model.json
    python3 sur_predict.py predict --manifest data/synth/manifest.json --model out/model.json --source src_003

Defaults: segments 320x180 pixels x 0.5 s with 50% spatial overlap, slope
stride k=2, top p=0.8 of segments, JND threshold 0.75.  Flags override a
JSON file given with --config, which overrides the defaults.

Exit codes: 0 ok, 2 configuration, 3 data, 4 numeric.
"""

import argparse
import csv
import logging
import math
import os
import sys
from datetime import datetime
from typing import Dict, List, Optional

from config import RunConfig, resolve, write_run_config
from errors import (EXIT_DATA, EXIT_OK, DegenerateSampleError, InsufficientDataError,
                    MissingDataError, SurPredictError)
from evaluator import (ground_truth, prepare_features, run_evaluation, source_fingerprint,
                       train_split)
from feature_cache import FeatureCache
from manifest import annotations_for, load_annotations, load_manifest, validate_manifest
from quality_index import MetricId
from reports import curve_svg, sur_model_svg, write_curve_csv, write_evaluation
from sur_model import (analytic_jnd, empirical_curve, fit_gaussian, gaussian_curve, jnd_point,
                       monotone_project)
from svr import load_model, predict_sur_curve, save_model
from synthetic import generate_synthetic


def banner(title: str):
    print("=" * 60)
    print(title)
    print(f"Started: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print("=" * 60 + "\n")


def done(message: str):
    print("\n" + "=" * 60)
    print(f"✅ {message}")
    print("=" * 60)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_extract_features(config: RunConfig) -> int:
    """Compute 40-D features for every (source, qp) into the cache."""
    config.require("manifest")
    banner("Feature extraction")

    print("📂 Step 1: Loading manifest …")
    manifest = load_manifest(config.manifest)
    print(f"✅ {len(manifest.sources)} sources, {len(manifest.qp_grid)} qps\n")

    print(f"🔬 Step 2: Extracting features into {config.cache_dir} …")
    vectors, computed = prepare_features(manifest, config.evaluation_config())
    rows = sum(len(v) for v in vectors.values())
    print(f"✅ {rows} cache rows ({computed} sources computed, "
          f"{len(vectors) - computed} already fresh)")

    write_run_config(config, config.cache_dir)
    done("Feature cache up to date")
    return EXIT_OK


def _cached_training_data(config: RunConfig):
    manifest = load_manifest(config.manifest)
    eval_config = config.evaluation_config()
    annotations = annotations_for(manifest)

    truths = {}
    for sid in manifest.source_ids:
        try:
            truths[sid], _ = ground_truth(annotations[sid], manifest.qp_grid, config.truth_rule,
                                          config.threshold)
        except DegenerateSampleError as exc:
            print(f"   ⚠️  skipping {sid}: {exc}")
    if not truths:
        raise InsufficientDataError("no source with usable annotations; training set is empty")

    with FeatureCache(config.cache_dir) as cache:
        features, fingerprints, stale = {}, {}, []
        for sid in truths:
            digest = source_fingerprint(manifest.source(sid), manifest, eval_config)
            if not cache.is_fresh(sid, digest, manifest.qp_grid):
                stale.append(sid)
                continue
            features[sid] = cache.get(sid, manifest.qp_grid)
            fingerprints[sid] = digest
    if stale:
        raise MissingDataError(f"feature cache {config.cache_dir} is missing or stale for "
                               f"{', '.join(stale)}; run 'sur_predict.py extract-features' first",
                               missing=stale)
    return manifest, eval_config, truths, features, fingerprints


def cmd_train(config: RunConfig) -> int:
    """Train the SVR on cached features and ground-truth SUR values."""
    config.require("manifest")
    banner("SVR training")

    print("📂 Step 1: Loading manifest, annotations and cached features …")
    manifest, eval_config, truths, features, fingerprints = _cached_training_data(config)
    print(f"✅ {len(features)} sources\n")

    print("🧠 Step 2: Training …" + (" (grid search)" if config.grid_search else ""))
    model = train_split(features, truths, sorted(features), eval_config, {
        "config": config.to_dict(),
        "manifest": manifest.name,
        "fingerprints": fingerprints,
    })
    status = "converged" if model.converged else "hit the iteration cap"
    print(f"✅ {model.coef.size} support vectors, solver {status} after {model.iterations} steps")
    print(f"   C={model.params.C:g} gamma={model.params.gamma:g} epsilon={model.params.epsilon:g}\n")

    path = config.model or os.path.join(config.out_dir, "model.json")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    save_model(model, path)
    write_run_config(config, os.path.dirname(os.path.abspath(path)))
    done(f"Model saved to {path}")
    return EXIT_OK


def cmd_predict(config: RunConfig) -> int:
    """Predict the SUR curve and JND point of one source."""
    config.require("manifest", "model", "source")
    banner(f"SUR prediction: {config.source}")

    print("📂 Step 1: Loading model and features …")
    model = load_model(config.model)
    manifest = load_manifest(config.manifest)
    manifest.source(config.source)
    vectors, _ = prepare_features(manifest, config.evaluation_config(), [config.source])
    print(f"✅ {len(vectors[config.source])} feature vectors\n")

    print("📈 Step 2: Predicting …")
    curve = predict_sur_curve(model, vectors[config.source], manifest.qp_grid)
    jnd = jnd_point(curve, config.threshold)
    if math.isinf(jnd):
        print(f"   ⚠️  SUR never falls to {config.threshold} on the grid (JND beyond grid)")
    else:
        print(f"✅ predicted JND at qp {jnd:.2f}")

    os.makedirs(config.out_dir, exist_ok=True)
    stem = os.path.join(config.out_dir, f"curve_{config.source}")
    write_curve_csv(curve, stem + ".csv")
    with open(stem + "_jnd.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["source_id", "threshold", "jnd_qp"])
        writer.writerow([config.source, config.threshold, "beyond_grid" if math.isinf(jnd) else f"{jnd:.6f}"])

    truth = None
    if config.annotations:
        sets = load_annotations(config.annotations)
        if config.source in sets:
            truth, truth_jnd = ground_truth(sets[config.source], manifest.qp_grid, config.truth_rule,
                                            config.threshold)
            print(f"   ground-truth JND at qp {truth_jnd:.2f}")
        else:
            print(f"   ⚠️  {config.annotations} has no annotations for {config.source}")
    curve_svg(curve, stem + ".svg", truth, config.threshold, title=f"{config.source}: predicted SUR")
    write_run_config(config, config.out_dir)
    done(f"Curve written to {stem}.csv")
    return EXIT_OK


def cmd_evaluate(config: RunConfig) -> int:
    """k-fold cross-validation with dSUR / dQP reports."""
    config.require("manifest")
    banner("Cross-validated evaluation")

    print("📂 Step 1: Loading manifest …")
    manifest = load_manifest(config.manifest)
    print(f"✅ {len(manifest.sources)} sources\n")

    print(f"🔁 Step 2: {config.folds}-fold evaluation …")
    report = run_evaluation(manifest, config.evaluation_config())
    for sid, reason in report.excluded.items():
        print(f"   ⚠️  excluded {sid}: {reason}")
    for column, agg in report.aggregates().items():
        print(f"   {column:>8}: dSUR {agg.delta_sur:.4f}  dQP {agg.delta_qp:.3f}  "
              f"({agg.sources} sources, {agg.beyond_grid} beyond grid)")
    print()

    print("📝 Step 3: Writing reports …")
    paths = write_evaluation(report, config.out_dir)
    write_run_config(config, config.out_dir)
    for p in paths:
        print(f"   {p}")
    done("Evaluation complete")
    return EXIT_OK


def cmd_synth(config: RunConfig) -> int:
    """Write a synthetic dataset."""
    synthetic = config.synthetic_config()
    banner(f"Synthetic dataset: {synthetic.sources} sources")
    manifest = generate_synthetic(synthetic, config.out_dir, config.synth_seed)
    write_run_config(config, config.out_dir)
    done(f"{len(manifest.sources)} sources written to {config.out_dir}")
    return EXIT_OK


def cmd_sur_fit(config: RunConfig) -> int:
    """Fit the Gaussian SUR model to annotation files."""
    config.require("annotations")
    banner("Gaussian SUR model")
    sets = load_annotations(config.annotations)
    wanted = [config.source] if config.source else sorted(sets)
    missing = [s for s in wanted if s not in sets]
    if missing or not wanted:
        raise MissingDataError(f"no annotations for: {', '.join(missing) or config.annotations}",
                               missing=missing)

    rows: List[Dict[str, object]] = []
    figures = []
    for sid in wanted:
        a = sets[sid]
        empirical = empirical_curve(a)
        if not empirical.is_monotone:
            empirical = monotone_project(empirical.values, empirical.qps)
        try:
            model = fit_gaussian(a)
        except DegenerateSampleError as exc:
            print(f"   ⚠️  {exc}")
            rows.append({"source_id": sid, "subjects": a.subjects, "mean": "", "std": "",
                         "jnd_gaussian": "", "jnd_grid": "",
                         "jnd_empirical": f"{jnd_point(empirical, config.threshold):.6f}"})
            continue
        row = {
            "source_id": sid,
            "subjects": a.subjects,
            "mean": f"{model.mean:.6f}",
            "std": f"{model.std:.6f}",
            "jnd_gaussian": f"{analytic_jnd(model, config.threshold):.6f}",
            "jnd_grid": f"{jnd_point(gaussian_curve(model), config.threshold):.6f}",
            "jnd_empirical": f"{jnd_point(empirical, config.threshold):.6f}",
        }
        rows.append(row)
        print(f"✅ {sid}: mean {model.mean:.2f}, std {model.std:.2f}, JND {row['jnd_gaussian']}")
        figures.append((a, model))

    # nothing is written until every source has been fitted
    os.makedirs(config.out_dir, exist_ok=True)
    for a, model in figures:
        sur_model_svg(a, model, os.path.join(config.out_dir, f"sur_model_{a.source_id}.svg"))
    path = os.path.join(config.out_dir, "sur_fit.csv")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    done(f"{len(rows)} sources written to {path}")
    return EXIT_OK


def cmd_validate(config: RunConfig) -> int:
    """Check a manifest and the files it names."""
    config.require("manifest")
    print(f"🔍 Validating {config.manifest}\n")
    findings = validate_manifest(config.manifest)
    errors = [f for f in findings if f.level == "error"]
    for f in findings:
        print(("❌ " if f.level == "error" else "⚠️  ") + f.message)
    if errors:
        print("\n💡 Common fixes:")
        print("   - paths in the manifest are relative to the manifest's own directory")
        print("   - every source needs coded clips for every qp in qp_grid, or a degradation recipe")
        print("   - annotation CSVs need the header source_id,subject_id,first_jnd_qp")
        return EXIT_DATA
    print(f"✅ Manifest is valid ({len(findings)} warning(s))")
    return EXIT_OK


COMMANDS = {
    "extract-features": cmd_extract_features,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "sur-fit": cmd_sur_fit,
    "validate": cmd_validate,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    d = RunConfig()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug logging")
    common.add_argument("--manifest", help="dataset manifest (JSON)")
    common.add_argument("--metric", choices=[m.value for m in MetricId],
                        help=f"local quality index (default {d.metric})")
    common.add_argument("--seg-width", type=int, help=f"segment width in pixels (default {d.seg_width})")
    common.add_argument("--seg-height", type=int, help=f"segment height in pixels (default {d.seg_height})")
    common.add_argument("--seg-duration", type=float,
                        help=f"segment duration in seconds (default {d.seg_duration})")
    common.add_argument("--spatial-overlap", type=float,
                        help=f"spatial overlap fraction (default {d.spatial_overlap})")
    common.add_argument("--k", type=int, help=f"slope stride in qp steps (default {d.k})")
    common.add_argument("--p", type=float, help=f"fraction of segments kept by slope (default {d.p})")
    common.add_argument("--C", type=float, help=f"SVR box constraint (default {d.C})")
    common.add_argument("--epsilon", type=float, help=f"SVR tube width (default {d.epsilon})")
    common.add_argument("--gamma", type=float, help=f"RBF kernel width (default {d.gamma})")
    common.add_argument("--tol", type=float, help=f"SMO stopping tolerance (default {d.tol})")
    common.add_argument("--max-passes", type=int, help=f"SMO iteration cap factor (default {d.max_passes})")
    common.add_argument("--grid-search", action="store_true", default=None,
                        help="pick C, gamma and epsilon by grouped inner cross-validation")
    common.add_argument("--folds", type=int, help=f"cross-validation folds (default {d.folds})")
    common.add_argument("--threshold", type=float, help=f"SUR level of the JND point (default {d.threshold})")
    common.add_argument("--truth-rule", choices=["gaussian", "empirical"],
                        help=f"ground-truth SUR curves (default {d.truth_rule})")
    common.add_argument("--fold-seed", type=int, help=f"fold shuffle seed (default {d.fold_seed})")
    common.add_argument("--svr-seed", type=int, help=f"SVR seed (default {d.svr_seed})")
    common.add_argument("--synth-seed", type=int, help=f"synthetic dataset seed (default {d.synth_seed})")
    common.add_argument("--cache-dir", help=f"feature cache directory (default {d.cache_dir})")
    common.add_argument("--out-dir", help=f"output directory (default {d.out_dir})")
    common.add_argument("--model", help="model file (train writes it, predict reads it)")
    common.add_argument("--source", help="source id")
    common.add_argument("--annotations", help="JND annotation CSV")
    common.add_argument("--scores", help="score table CSV for --metric external (clip_id,qp,w,h,t,score)")
    common.add_argument("--synth-sources", type=int, help=f"synthetic source count (default {d.synth_sources})")
    common.add_argument("--synth-width", type=int, help=f"synthetic frame width (default {d.synth_width})")
    common.add_argument("--synth-height", type=int, help=f"synthetic frame height (default {d.synth_height})")
    common.add_argument("--synth-duration", type=float,
                        help=f"synthetic clip duration in seconds (default {d.synth_duration})")
    common.add_argument("--synth-frame-rate", type=int,
                        help=f"synthetic frame rate (default {d.synth_frame_rate})")
    common.add_argument("--synth-qp-step", type=int, help=f"synthetic qp grid step (default {d.synth_qp_step})")
    common.add_argument("--n-jobs", type=int, help=f"parallel workers, -1 for all cores (default {d.n_jobs})")

    parser = argparse.ArgumentParser(description="SUR curve and JND prediction")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, func in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(func.__doc__ or "").strip() or None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = resolve(vars(args), args.config)
        return COMMANDS[config.subcommand](config)
    except SurPredictError as exc:
        print(f"❌ {exc}")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

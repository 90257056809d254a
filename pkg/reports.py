"""
Report files for evaluation and prediction runs.

CSV tables:
  per_source.csv        one row per evaluated source
  summary.csv           dSUR / dQP per resolution column plus "all"
  delta_sur_hist.csv    distribution of per-source dSUR
  curve_<id>.csv        qp,sur of one predicted curve

SVG figures (static, diffable, no plotting library):
  jnd_scatter.svg       predicted vs ground-truth JND with the 45-degree line
  delta_sur_hist.svg    bar chart of per-source dSUR
  curve_<id>.svg        predicted SUR curve, optionally over the truth curve
  sur_model_<id>.svg    JND histogram, fitted Gaussian density and SUR curve
"""

import csv
import logging
import math
import os
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from lxml import etree

from evaluator import ALL_COLUMN, EvaluationReport
from sur_model import (DEFAULT_THRESHOLD, GaussianJndModel, JndAnnotationSet, SurCurve,
                       gaussian_curve)

log = logging.getLogger(__name__)

SVG_NS = "http://www.w3.org/2000/svg"
WIDTH, HEIGHT, MARGIN = 520, 380, 56
HIST_BINS = 10

COLORS = {
    "predicted": "#d62728",
    "truth": "#1f77b4",
    "density": "#2ca02c",
    "bars": "#9ecae1",
    "guide": "#7f7f7f",
}


def _fmt(value: Optional[float]) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float) and math.isinf(value):
        return "beyond_grid"
    return f"{value:.6f}"


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------
PER_SOURCE_FIELDS = [
    "source_id",
    "resolution",
    "fold",
    "delta_sur",
    "delta_qp",
    "jnd_predicted",
    "jnd_truth",
]


def write_per_source_csv(report: EvaluationReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=PER_SOURCE_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in report.rows:
            writer.writerow({
                "source_id": r.source_id,
                "resolution": r.resolution,
                "fold": r.fold,
                "delta_sur": _fmt(r.delta_sur),
                "delta_qp": _fmt(r.delta_qp),
                "jnd_predicted": _fmt(r.jnd_predicted),
                "jnd_truth": _fmt(r.jnd_truth),
            })
    log.info("wrote %d per-source rows to %s", len(report.rows), path)


def write_summary_csv(report: EvaluationReport, path: str) -> None:
    """Table layout: one row per metric, one column per resolution and 'all'."""
    aggregates = report.aggregates()
    columns = report.resolutions + [ALL_COLUMN]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["metric"] + columns, lineterminator="\n")
        writer.writeheader()
        writer.writerow({"metric": "delta_sur", **{c: _fmt(aggregates[c].delta_sur) for c in columns}})
        writer.writerow({"metric": "delta_qp", **{c: _fmt(aggregates[c].delta_qp) for c in columns}})
        writer.writerow({"metric": "sources", **{c: aggregates[c].sources for c in columns}})
        writer.writerow({"metric": "beyond_grid", **{c: aggregates[c].beyond_grid for c in columns}})
        writer.writerow({"metric": "excluded", **{c: "" for c in columns[:-1]},
                         ALL_COLUMN: len(report.excluded)})
        writer.writerow({"metric": "truth_rule", **{c: "" for c in columns[:-1]},
                         ALL_COLUMN: report.truth_rule})


def histogram(values: Sequence[float], bins: int = HIST_BINS) -> Tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=np.float64)
    top = float(values.max()) if values.size and values.max() > 0 else 1.0
    return np.histogram(values, bins=bins, range=(0.0, top))


def write_histogram_csv(values: Sequence[float], path: str, bins: int = HIST_BINS) -> None:
    counts, edges = histogram(values, bins)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, n in zip(edges[:-1], edges[1:], counts):
            writer.writerow([_fmt(float(lo)), _fmt(float(hi)), int(n)])


def write_curve_csv(curve: SurCurve, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["qp", "sur"])
        for q, v in zip(curve.qps, curve.values):
            writer.writerow([int(q), _fmt(float(v))])


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------
def _el(parent, tag: str, text: Optional[str] = None, **attrs):
    node = etree.SubElement(parent, f"{{{SVG_NS}}}{tag}",
                            {k.rstrip("_").replace("_", "-"): str(v) for k, v in attrs.items()})
    if text is not None:
        node.text = text
    return node


class Chart:
    """One set of axes on an SVG canvas; data coordinates map linearly to pixels."""

    def __init__(self, title: str, x_range: Tuple[float, float], y_range: Tuple[float, float],
                 x_label: str, y_label: str):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        self.svg = etree.Element(f"{{{SVG_NS}}}svg", nsmap={None: SVG_NS},
                                 width=str(WIDTH), height=str(HEIGHT),
                                 viewBox=f"0 0 {WIDTH} {HEIGHT}")
        _el(self.svg, "rect", x=0, y=0, width=WIDTH, height=HEIGHT, fill="white")
        _el(self.svg, "text", title, x=WIDTH // 2, y=22, text_anchor="middle",
            font_family="sans-serif", font_size=14)
        self._axes(x_label, y_label)

    def px(self, x: float) -> float:
        return round(MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * MARGIN), 2)

    def py(self, y: float) -> float:
        return round(HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * MARGIN), 2)

    def _axes(self, x_label: str, y_label: str):
        left, right, bottom, top = MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN
        _el(self.svg, "line", x1=left, y1=bottom, x2=right, y2=bottom, stroke="black")
        _el(self.svg, "line", x1=left, y1=bottom, x2=left, y2=top, stroke="black")
        for v in np.linspace(self.x0, self.x1, 6):
            _el(self.svg, "text", f"{v:g}", x=self.px(v), y=bottom + 16, text_anchor="middle",
                font_family="sans-serif", font_size=10)
        for v in np.linspace(self.y0, self.y1, 6):
            _el(self.svg, "text", f"{v:.3g}", x=left - 6, y=self.py(v) + 3, text_anchor="end",
                font_family="sans-serif", font_size=10)
        _el(self.svg, "text", x_label, x=WIDTH // 2, y=HEIGHT - 14, text_anchor="middle",
            font_family="sans-serif", font_size=12)
        _el(self.svg, "text", y_label, x=16, y=HEIGHT // 2, text_anchor="middle",
            font_family="sans-serif", font_size=12, transform=f"rotate(-90 16 {HEIGHT // 2})")

    def polyline(self, xs: Iterable[float], ys: Iterable[float], color: str, dashed: bool = False):
        points = " ".join(f"{self.px(x)},{self.py(y)}" for x, y in zip(xs, ys))
        attrs = {"stroke_dasharray": "6 4"} if dashed else {}
        _el(self.svg, "polyline", points=points, fill="none", stroke=color, stroke_width=2, **attrs)

    def dots(self, xs: Iterable[float], ys: Iterable[float], color: str):
        for x, y in zip(xs, ys):
            _el(self.svg, "circle", cx=self.px(x), cy=self.py(y), r=3, fill=color)

    def bars(self, edges: np.ndarray, heights: np.ndarray, color: str):
        for lo, hi, h in zip(edges[:-1], edges[1:], heights):
            if h <= 0:
                continue
            _el(self.svg, "rect", x=self.px(lo), y=self.py(h), width=round(self.px(hi) - self.px(lo), 2),
                height=round(self.py(self.y0) - self.py(h), 2), fill=color, stroke="white")

    def legend(self, entries: Sequence[Tuple[str, str]]):
        for n, (label, color) in enumerate(entries):
            y = MARGIN + 8 + 16 * n
            _el(self.svg, "line", x1=WIDTH - MARGIN - 110, y1=y, x2=WIDTH - MARGIN - 92, y2=y,
                stroke=color, stroke_width=3)
            _el(self.svg, "text", label, x=WIDTH - MARGIN - 86, y=y + 4,
                font_family="sans-serif", font_size=11)

    def save(self, path: str):
        with open(path, "wb") as f:
            f.write(etree.tostring(self.svg, pretty_print=True, xml_declaration=True, encoding="utf-8"))


def scatter_svg(report: EvaluationReport, path: str) -> None:
    pairs = report.jnd_pairs()
    values = [v for pair in pairs for v in pair] or [0.0, 51.0]
    lo, hi = math.floor(min(values)) - 1, math.ceil(max(values)) + 1
    chart = Chart("Predicted vs ground-truth JND", (lo, hi), (lo, hi),
                  "ground-truth JND (qp)", "predicted JND (qp)")
    chart.polyline([lo, hi], [lo, hi], COLORS["guide"], dashed=True)
    chart.dots([t for t, _ in pairs], [p for _, p in pairs], COLORS["predicted"])
    chart.save(path)


def delta_sur_histogram_svg(report: EvaluationReport, path: str, bins: int = HIST_BINS) -> None:
    counts, edges = histogram([r.delta_sur for r in report.rows], bins)
    chart = Chart("Per-source SUR error", (float(edges[0]), float(edges[-1])),
                  (0.0, float(max(counts.max(), 1))), "mean |dSUR|", "sources")
    chart.bars(edges, counts, COLORS["bars"])
    chart.save(path)


def curve_svg(predicted: SurCurve, path: str, truth: Optional[SurCurve] = None,
              threshold: float = DEFAULT_THRESHOLD, title: str = "SUR curve") -> None:
    q = predicted.qps
    chart = Chart(title, (float(q[0]), float(q[-1])), (0.0, 1.0), "qp", "SUR")
    chart.polyline([q[0], q[-1]], [threshold, threshold], COLORS["guide"], dashed=True)
    entries = [("predicted", COLORS["predicted"])]
    if truth is not None:
        chart.polyline(truth.qps, truth.values, COLORS["truth"])
        entries.append(("truth", COLORS["truth"]))
    chart.polyline(q, predicted.values, COLORS["predicted"])
    chart.legend(entries)
    chart.save(path)


def sur_model_svg(annotations: JndAnnotationSet, model: GaussianJndModel, path: str,
                  qps: Sequence[int] = tuple(range(1, 52))) -> None:
    """JND histogram (normalised), fitted Gaussian density and the SUR curve on one chart."""
    lo, hi = float(min(qps)), float(max(qps))
    edges = np.arange(lo - 0.5, hi + 1.5)
    counts, _ = np.histogram(annotations.jnd_qps, bins=edges)
    share = counts / counts.sum()
    xs = np.linspace(lo, hi, 201)
    density = np.exp(-0.5 * ((xs - model.mean) / model.std) ** 2) / (model.std * math.sqrt(2 * math.pi))
    top = max(1.0, float(share.max()), float(density.max()))

    chart = Chart(f"{annotations.source_id}: mean {model.mean:.2f}, std {model.std:.2f}",
                  (lo, hi), (0.0, top), "qp", "share / SUR")
    chart.bars(edges, share, COLORS["bars"])
    chart.polyline(xs, density, COLORS["density"])
    curve = gaussian_curve(model, qps)
    chart.polyline(curve.qps, curve.values, COLORS["truth"])
    chart.legend([("JND density", COLORS["density"]), ("SUR", COLORS["truth"])])
    chart.save(path)


def write_evaluation(report: EvaluationReport, out_dir: str) -> List[str]:
    """All evaluation artefacts into out_dir; returns the written paths."""
    paths = {
        "per_source": os.path.join(out_dir, "per_source.csv"),
        "summary": os.path.join(out_dir, "summary.csv"),
        "hist_csv": os.path.join(out_dir, "delta_sur_hist.csv"),
        "hist_svg": os.path.join(out_dir, "delta_sur_hist.svg"),
        "scatter": os.path.join(out_dir, "jnd_scatter.svg"),
    }
    write_per_source_csv(report, paths["per_source"])
    write_summary_csv(report, paths["summary"])
    write_histogram_csv([r.delta_sur for r in report.rows], paths["hist_csv"])
    delta_sur_histogram_svg(report, paths["hist_svg"])
    scatter_svg(report, paths["scatter"])
    return list(paths.values())

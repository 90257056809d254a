"""
Dataset manifest and JND annotation files.

Manifest (JSON):

    {
      "name": "studio-720p",
      "qp_grid": [1, 3, 5, ..., 51],
      "scores": "vmaf_scores.csv",              optional, for --metric external
      "sources": [
        {
          "source_id": "src_000",
          "reference": "ref/src_000.y4m",
          "coded": {"1": "coded/src_000_qp01.y4m", ...},
          "degradation": {"kind": "blur_quant", ...},   instead of "coded"
          "annotations": "jnd.csv",
          "resolution": "720p",
          "truth": {"mu": 0.41, "jnd_mean": 26.9}        synthetic only
        }
      ]
    }

Relative paths are resolved against the manifest's directory.

Annotations (CSV):  source_id,subject_id,first_jnd_qp
Optional flags:     source_id,subject_id,qp,noticed
"""

import csv
import json
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from errors import ConfigurationError, FormatError, MissingDataError, SurPredictError
from sur_model import JndAnnotationSet, fit_gaussian

log = logging.getLogger(__name__)

ANNOTATION_HEADER = ["source_id", "subject_id", "first_jnd_qp"]
FLAGS_HEADER = ["source_id", "subject_id", "qp", "noticed"]


@dataclass(frozen=True)
class SourceEntry:
    source_id: str
    reference: str
    annotations: str
    resolution: str = ""
    coded: Mapping[int, str] = field(default_factory=dict)
    degradation: Optional[Mapping[str, Any]] = None
    flags: Optional[str] = None
    truth: Mapping[str, float] = field(default_factory=dict)

    @property
    def qps(self) -> List[int]:
        return sorted(self.coded)


@dataclass(frozen=True)
class DatasetManifest:
    sources: Tuple[SourceEntry, ...]
    qp_grid: Tuple[int, ...]
    name: str = ""
    scores: Optional[str] = None
    root: str = "."

    def source(self, source_id: str) -> SourceEntry:
        for s in self.sources:
            if s.source_id == source_id:
                return s
        raise ConfigurationError(f"source {source_id!r} not in manifest {self.name or self.root}")

    @property
    def source_ids(self) -> List[str]:
        return [s.source_id for s in self.sources]


# ---------------------------------------------------------------------------
# manifest I/O
# ---------------------------------------------------------------------------
def _resolve(root: str, path: Optional[str]) -> Optional[str]:
    if path is None:
        return None
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(root, path))


def _relative(root: str, path: Optional[str]) -> Optional[str]:
    if path is None:
        return None
    return os.path.relpath(path, root).replace(os.sep, "/")


def _parse_source(raw: Mapping[str, Any], root: str, position: int) -> SourceEntry:
    where = f"sources[{position}]"
    if not isinstance(raw, Mapping):
        raise FormatError(f"{where} should be an object")
    for key in ("source_id", "reference", "annotations"):
        if key not in raw:
            raise FormatError(f"{where}: missing '{key}'")
    if "coded" not in raw and "degradation" not in raw:
        raise FormatError(f"{where}: needs 'coded' paths or a 'degradation' recipe")
    try:
        coded = {int(qp): _resolve(root, p) for qp, p in (raw.get("coded") or {}).items()}
    except (TypeError, ValueError):
        raise FormatError(f"{where}: 'coded' keys must be qp integers") from None
    return SourceEntry(
        source_id=str(raw["source_id"]),
        reference=_resolve(root, raw["reference"]),
        annotations=_resolve(root, raw["annotations"]),
        resolution=str(raw.get("resolution", "")),
        coded=coded,
        degradation=raw.get("degradation"),
        flags=_resolve(root, raw.get("flags")),
        truth=dict(raw.get("truth", {})),
    )


def parse_manifest(doc: Mapping[str, Any], root: str = ".") -> DatasetManifest:
    if not isinstance(doc, Mapping):
        raise FormatError("manifest root should be an object ({})")
    if not isinstance(doc.get("sources"), list):
        raise FormatError("manifest needs a 'sources' array")
    if not isinstance(doc.get("qp_grid"), list) or not doc["qp_grid"]:
        raise FormatError("manifest needs a non-empty 'qp_grid' array")
    try:
        grid = tuple(sorted(int(q) for q in doc["qp_grid"]))
    except (TypeError, ValueError):
        raise FormatError("'qp_grid' must hold integers") from None
    if any(not 1 <= q <= 51 for q in grid) or len(set(grid)) != len(grid):
        raise FormatError(f"'qp_grid' must hold distinct qps in 1..51, got {list(grid)}")

    sources = tuple(_parse_source(raw, root, i) for i, raw in enumerate(doc["sources"]))
    ids = [s.source_id for s in sources]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise FormatError(f"duplicate source ids: {dupes}")

    gaps = [(s.source_id, q) for s in sources if s.coded for q in grid if q not in s.coded]
    if gaps:
        shown = ", ".join(f"{sid}@qp{q}" for sid, q in gaps[:10])
        raise MissingDataError(f"coded clips missing from the qp grid: {shown}", missing=gaps)

    return DatasetManifest(sources=sources, qp_grid=grid, name=str(doc.get("name", "")),
                           scores=_resolve(root, doc.get("scores")), root=root)


def load_manifest(path: str) -> DatasetManifest:
    try:
        with open(path, encoding="utf-8") as f:
            content = f.read()
    except FileNotFoundError:
        raise ConfigurationError(f"manifest not found: {path}") from None
    if not content.strip():
        raise FormatError(f"{path}: manifest is empty")
    try:
        doc = json.loads(content)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: JSON parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return parse_manifest(doc, root=os.path.dirname(os.path.abspath(path)))


def manifest_to_dict(manifest: DatasetManifest, root: Optional[str] = None) -> Dict[str, Any]:
    root = root or manifest.root
    sources = []
    for s in manifest.sources:
        entry: Dict[str, Any] = {
            "source_id": s.source_id,
            "reference": _relative(root, s.reference),
            "annotations": _relative(root, s.annotations),
            "resolution": s.resolution,
        }
        if s.coded:
            entry["coded"] = {str(q): _relative(root, p) for q, p in sorted(s.coded.items())}
        if s.degradation is not None:
            entry["degradation"] = dict(s.degradation)
        if s.flags:
            entry["flags"] = _relative(root, s.flags)
        if s.truth:
            entry["truth"] = dict(s.truth)
        sources.append(entry)
    doc: Dict[str, Any] = {"name": manifest.name, "qp_grid": list(manifest.qp_grid)}
    if manifest.scores:
        doc["scores"] = _relative(root, manifest.scores)
    doc["sources"] = sources
    return doc


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    root = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest_to_dict(manifest, root), f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# annotations
# ---------------------------------------------------------------------------
def _read_rows(path: str, header: Sequence[str]) -> List[Dict[str, str]]:
    try:
        f = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise MissingDataError(f"annotation file not found: {path}", missing=[path]) from None
    with f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != list(header):
            raise FormatError(f"{path}: header must be {','.join(header)}, got {reader.fieldnames}")
        return list(reader)


def load_annotations(path: str, flags_path: Optional[str] = None) -> Dict[str, JndAnnotationSet]:
    """All annotation sets in a CSV, keyed by source id (subjects in file order)."""
    per_source: Dict[str, List[Tuple[str, int]]] = defaultdict(list)
    for line_no, row in enumerate(_read_rows(path, ANNOTATION_HEADER), start=2):
        try:
            per_source[row["source_id"].strip()].append(
                (row["subject_id"].strip(), int(row["first_jnd_qp"])))
        except (TypeError, ValueError):
            raise FormatError(f"{path} line {line_no}: first_jnd_qp must be an integer") from None

    flags: Dict[str, Dict[Tuple[str, int], bool]] = defaultdict(dict)
    if flags_path:
        for line_no, row in enumerate(_read_rows(flags_path, FLAGS_HEADER), start=2):
            try:
                noticed = row["noticed"].strip().lower() in ("1", "true", "yes")
                flags[row["source_id"].strip()][(row["subject_id"].strip(), int(row["qp"]))] = noticed
            except (TypeError, ValueError):
                raise FormatError(f"{flags_path} line {line_no}: qp must be an integer") from None

    return {
        sid: JndAnnotationSet(
            source_id=sid,
            jnd_qps=tuple(q for _, q in rows),
            subject_ids=tuple(s for s, _ in rows),
            noticed=flags.get(sid),
        )
        for sid, rows in per_source.items()
    }


def write_annotations(sets: Sequence[JndAnnotationSet], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(ANNOTATION_HEADER)
        for a in sets:
            subjects = a.subject_ids or tuple(f"s{m:03d}" for m in range(a.subjects))
            for subject, qp in zip(subjects, a.jnd_qps):
                writer.writerow([a.source_id, subject, qp])


def annotations_for(manifest: DatasetManifest) -> Dict[str, JndAnnotationSet]:
    """Annotation set of every manifest source; files shared by sources are read once."""
    cache: Dict[Tuple[str, Optional[str]], Dict[str, JndAnnotationSet]] = {}
    out, missing = {}, []
    for s in manifest.sources:
        key = (s.annotations, s.flags)
        if key not in cache:
            cache[key] = load_annotations(s.annotations, s.flags)
        if s.source_id in cache[key]:
            out[s.source_id] = cache[key][s.source_id]
        else:
            missing.append(s.source_id)
    if missing:
        raise MissingDataError(f"no JND annotations for: {', '.join(missing)}", missing=missing)
    return out


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Finding:
    level: str          # "error" | "warning"
    message: str


def validate_manifest(path: str) -> List[Finding]:
    """Check a manifest file and everything it points at; never raises."""
    findings: List[Finding] = []
    try:
        manifest = load_manifest(path)
    except SurPredictError as exc:
        return [Finding("error", str(exc))]

    for s in manifest.sources:
        if not os.path.exists(s.reference):
            findings.append(Finding("error", f"{s.source_id}: reference clip not found: {s.reference}"))
        for qp, p in sorted(s.coded.items()):
            if not os.path.exists(p):
                findings.append(Finding("error", f"{s.source_id}: coded clip qp={qp} not found: {p}"))
        if s.degradation is not None and s.degradation.get("kind") != "blur_quant":
            findings.append(Finding("error", f"{s.source_id}: unknown degradation kind "
                                             f"{s.degradation.get('kind')!r}"))
        if not s.resolution:
            findings.append(Finding("warning", f"{s.source_id}: no resolution tag"))

    if manifest.scores and not os.path.exists(manifest.scores):
        findings.append(Finding("error", f"score table not found: {manifest.scores}"))

    try:
        sets = annotations_for(manifest)
    except SurPredictError as exc:
        findings.append(Finding("error", str(exc)))
        return findings
    for sid, a in sets.items():
        try:
            fit_gaussian(a)
        except SurPredictError as exc:
            findings.append(Finding("warning", f"{exc} (source will be excluded from evaluation)"))
    return findings

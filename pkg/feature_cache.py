"""
On-disk feature cache.

Layout of a cache directory:
  features.csv       source_id,qp,x0,...,x39   one row per (source, qp), sorted
  fingerprints.json  source_id -> content fingerprint of the inputs the rows came from

A source's rows are fresh when its stored fingerprint matches the current one
and every qp of the grid has a readable row.  Unreadable rows are dropped on
load, which makes their source stale so the next extraction repairs it.
"""

import csv
import hashlib
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Set

import numpy as np

from errors import MissingDataError
from features import FEATURE_DIM, FeatureVector

log = logging.getLogger(__name__)

CHUNK = 1 << 20


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(CHUNK), b""):
            h.update(block)
    return h.hexdigest()


def fingerprint(paths: Sequence[str], settings: Mapping[str, Any]) -> str:
    """Hash of file contents plus the settings that shape the features."""
    h = hashlib.sha256()
    for path in paths:
        h.update(file_digest(path).encode("ascii"))
    h.update(json.dumps(settings, sort_keys=True, default=str).encode("utf-8"))
    return h.hexdigest()


class FeatureCache:
    """Cache context-manager.  Usage:  with FeatureCache(cache_dir) as cache: ..."""

    CSV_NAME = "features.csv"
    FINGERPRINTS_NAME = "fingerprints.json"
    HEADER = ["source_id", "qp"] + [f"x{j}" for j in range(FEATURE_DIM)]

    def __init__(self, cache_dir: str):
        self.cache_dir = cache_dir
        self.rows: Dict[str, Dict[int, np.ndarray]] = {}
        self.fingerprints: Dict[str, str] = {}
        self.corrupt: Set[str] = set()
        self.dirty = False

    @property
    def csv_path(self) -> str:
        return os.path.join(self.cache_dir, self.CSV_NAME)

    @property
    def fingerprints_path(self) -> str:
        return os.path.join(self.cache_dir, self.FINGERPRINTS_NAME)

    def __enter__(self):
        os.makedirs(self.cache_dir, exist_ok=True)
        self._load()
        return self

    def __exit__(self, *args):
        if self.dirty:
            self.flush()

    # ------------------------------------------------------------------
    # load / store
    # ------------------------------------------------------------------
    def _load(self):
        if os.path.exists(self.fingerprints_path):
            try:
                with open(self.fingerprints_path, encoding="utf-8") as f:
                    self.fingerprints = {str(k): str(v) for k, v in json.load(f).items()}
            except (json.JSONDecodeError, AttributeError):
                log.warning("%s unreadable; every source will be recomputed", self.fingerprints_path)
                self.fingerprints = {}
        if not os.path.exists(self.csv_path):
            return
        with open(self.csv_path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != self.HEADER:
                log.warning("%s has an unexpected header; ignoring its rows", self.csv_path)
                self.fingerprints = {}
                return
            for line_no, row in enumerate(reader, start=2):
                source_id = row[0] if row else ""
                try:
                    if len(row) != len(self.HEADER):
                        raise ValueError(f"{len(row)} fields")
                    x = np.array([float(v) for v in row[2:]])
                    if not np.all(np.isfinite(x)):
                        raise ValueError("non-finite value")
                    self.rows.setdefault(source_id, {})[int(row[1])] = x
                except ValueError as exc:
                    log.warning("%s line %d: corrupt row (%s); %s will be recomputed",
                                self.CSV_NAME, line_no, exc, source_id or "its source")
                    self.corrupt.add(source_id)

    def flush(self):
        tmp = self.csv_path + ".tmp"
        with open(tmp, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(self.HEADER)
            for source_id in sorted(self.rows):
                for qp in sorted(self.rows[source_id]):
                    writer.writerow([source_id, qp] + [repr(float(v)) for v in self.rows[source_id][qp]])
        os.replace(tmp, self.csv_path)
        with open(self.fingerprints_path, "w", encoding="utf-8") as f:
            json.dump(dict(sorted(self.fingerprints.items())), f, indent=2)
            f.write("\n")
        self.dirty = False

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------
    def is_fresh(self, source_id: str, digest: str, qps: Iterable[int]) -> bool:
        if source_id in self.corrupt or self.fingerprints.get(source_id) != digest:
            return False
        have = self.rows.get(source_id, {})
        return all(q in have for q in qps)

    def put(self, source_id: str, digest: str, vectors: Sequence[FeatureVector]):
        self.rows[source_id] = {v.qp: np.asarray(v.x, dtype=np.float64) for v in vectors}
        self.fingerprints[source_id] = digest
        self.corrupt.discard(source_id)
        self.dirty = True

    def get(self, source_id: str, qps: Optional[Iterable[int]] = None) -> List[FeatureVector]:
        have = self.rows.get(source_id, {})
        wanted = sorted(have) if qps is None else sorted(int(q) for q in qps)
        gaps = [q for q in wanted if q not in have]
        if gaps or not wanted:
            raise MissingDataError(f"feature cache has no rows for {source_id} at qp {gaps or 'any'}; "
                                   f"run extract-features first", missing=gaps)
        return [FeatureVector(have[q], source_id, q) for q in wanted]

    def source_ids(self) -> List[str]:
        return sorted(self.rows)

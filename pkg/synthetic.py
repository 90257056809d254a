"""
Synthetic JND dataset: a desk-scale stand-in for a subjective test campaign.

Each source gets a masking strength mu ~ U[0, 1].  Its reference clip mixes
a moving gradient, a drifting sinusoidal texture and fresh per-frame noise of
amplitude mu * noise_amplitude under a slowly varying spatial envelope, so
busier sources hide more distortion.  The ground-truth JND distribution is
N(jnd_base + jnd_gain * mu, jnd_std^2) and each of `subjects` draws is
rounded up to the first integer qp at or above it.

Coded clips are not stored.  The manifest carries a degradation recipe and
`degrade` rebuilds clip d_i on demand: uniform quantisation with step
2^(qp/12), preceded above qp blur_knee by a gaussian blur whose sigma grows
linearly to blur_scale at qp 51.  Quantisation error has RMS step / sqrt(12),
which walks the psnr_mapped drop from a few points at low qp to about 40 at
qp 45.  Below blur_knee the clip is only quantised.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Any, Dict, Mapping, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from errors import ConfigurationError
from manifest import DatasetManifest, SourceEntry, save_manifest, write_annotations
from media_io import Clip, ClipRole, save_clip
from sur_model import MAX_QP, MIN_QP, JndAnnotationSet

log = logging.getLogger(__name__)

DEGRADATION_KIND = "blur_quant"
DEFAULT_SEED = 7


@dataclass(frozen=True)
class SyntheticConfig:
    sources: int = 40
    width: int = 640
    height: int = 360
    duration: float = 2.0
    frame_rate: int = 10
    qp_grid: Tuple[int, ...] = tuple(range(1, 52, 2))
    subjects: int = 30
    jnd_base: float = 22.0
    jnd_gain: float = 12.0
    jnd_std: float = 3.0
    noise_amplitude: float = 40.0
    blur_scale: float = 0.5
    blur_knee: int = 40
    resolution: str = "360p"

    def __post_init__(self):
        if self.sources < 1 or self.subjects < 1:
            raise ConfigurationError("synthetic dataset needs at least one source and one subject")
        if self.width < 16 or self.height < 16:
            raise ConfigurationError(f"synthetic frame {self.width}x{self.height} too small")
        if not self.duration > 0 or self.frame_rate < 1:
            raise ConfigurationError("duration and frame rate must be positive")
        if not self.jnd_std > 0:
            raise ConfigurationError(f"jnd_std must be > 0, got {self.jnd_std}")
        if self.blur_scale < 0 or not MIN_QP <= self.blur_knee < MAX_QP:
            raise ConfigurationError(f"blur_scale must be >= 0 and blur_knee in {MIN_QP}..{MAX_QP - 1}")
        if any(not MIN_QP <= q <= MAX_QP for q in self.qp_grid):
            raise ConfigurationError(f"qp grid must lie in {MIN_QP}..{MAX_QP}")

    @property
    def frame_count(self) -> int:
        return int(round(self.duration * self.frame_rate))

    def recipe(self) -> Dict[str, Any]:
        return {"kind": DEGRADATION_KIND, "blur_scale": self.blur_scale, "blur_knee": self.blur_knee}

    def jnd_mean(self, mu: float) -> float:
        return self.jnd_base + self.jnd_gain * mu


# ---------------------------------------------------------------------------
# content
# ---------------------------------------------------------------------------
def render_reference(config: SyntheticConfig, mu: float, rng: np.random.Generator) -> np.ndarray:
    """(frames, height, width) uint8 luma of one procedural source."""
    f, h, w = config.frame_count, config.height, config.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    angle = rng.uniform(0, 2 * np.pi)
    drift = rng.uniform(0.5, 2.0)                         # pixels per frame
    period_x, period_y = rng.uniform(24, 64, size=2)
    phase_env = rng.uniform(0, 2 * np.pi, size=2)

    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * xx / w + phase_env[0]) * \
        np.cos(2 * np.pi * yy / h + phase_env[1])

    volume = np.empty((f, h, w), dtype=np.uint8)
    for t in range(f):
        shift = drift * t
        gradient = 70.0 + 60.0 * ((xx + shift) * np.cos(angle) / w + yy * np.sin(angle) / h)
        texture = 25.0 * np.sin(2 * np.pi * (xx + shift) / period_x) * \
            np.sin(2 * np.pi * yy / period_y)
        noise = mu * config.noise_amplitude * envelope * rng.standard_normal((h, w))
        volume[t] = np.clip(np.rint(gradient + texture + noise), 0, 255).astype(np.uint8)
    return volume


def blur_sigma(qp: int, recipe: Mapping[str, Any]) -> float:
    knee = int(recipe.get("blur_knee", 40))
    scale = float(recipe.get("blur_scale", 0.5))
    return scale * max(0, qp - knee) / (MAX_QP - knee)


def degrade_luma(luma: np.ndarray, qp: int, recipe: Mapping[str, Any]) -> np.ndarray:
    if recipe.get("kind") != DEGRADATION_KIND:
        raise ConfigurationError(f"unknown degradation kind {recipe.get('kind')!r}")
    out = np.asarray(luma, dtype=np.float64)
    sigma = blur_sigma(qp, recipe)
    if sigma > 0:
        out = gaussian_filter(out, sigma=(0, sigma, sigma), mode="reflect")
    step = 2.0 ** (qp / 12.0)
    return np.clip(np.rint(np.rint(out / step) * step), 0, 255).astype(np.uint8)


def degrade(reference: Clip, qp: int, recipe: Mapping[str, Any]) -> Clip:
    """Coded surrogate d_qp of a reference clip."""
    return reference.with_luma(degrade_luma(reference.luma_volume, qp, recipe), ClipRole.coded(qp))


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------
def draw_subjects(rng: np.random.Generator, mean: float, std: float, count: int) -> Tuple[int, ...]:
    """First qp at or above each subject's continuous threshold."""
    samples = np.ceil(rng.normal(mean, std, size=count))
    return tuple(int(q) for q in np.clip(samples, MIN_QP, MAX_QP))


def generate_synthetic(config: SyntheticConfig, out_dir: str, seed: int = DEFAULT_SEED) -> DatasetManifest:
    """Write reference clips, annotations and manifest.json under `out_dir`."""
    os.makedirs(os.path.join(out_dir, "sources"), exist_ok=True)
    master = np.random.default_rng(seed)
    mus = master.uniform(0.0, 1.0, size=config.sources)
    annotations_path = os.path.join(out_dir, "jnd.csv")

    entries, sets = [], []
    for n, mu in enumerate(mus):
        source_id = f"src_{n:03d}"
        rng = np.random.default_rng([seed, n])
        luma = render_reference(config, float(mu), rng)
        clip = Clip.from_luma(luma, config.frame_rate, name=source_id)
        ref_path = os.path.join(out_dir, "sources", f"{source_id}.y4m")
        save_clip(clip, ref_path)

        mean = config.jnd_mean(float(mu))
        subjects = draw_subjects(rng, mean, config.jnd_std, config.subjects)
        sets.append(JndAnnotationSet(source_id, subjects,
                                     tuple(f"s{m:03d}" for m in range(config.subjects))))
        entries.append(SourceEntry(
            source_id=source_id,
            reference=ref_path,
            annotations=annotations_path,
            resolution=config.resolution,
            degradation=config.recipe(),
            truth={"mu": float(mu), "jnd_mean": mean, "jnd_std": config.jnd_std},
        ))
        log.debug("%s: mu=%.3f jnd mean %.2f", source_id, mu, mean)

    write_annotations(sets, annotations_path)
    manifest = DatasetManifest(
        sources=tuple(entries),
        qp_grid=tuple(sorted(config.qp_grid)),
        name=f"synthetic-{config.sources}x{config.resolution}-seed{seed}",
        root=os.path.abspath(out_dir),
    )
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    with open(os.path.join(out_dir, "synthetic_config.json"), "w", encoding="utf-8") as f:
        json.dump({"seed": seed, **{k: list(v) if isinstance(v, tuple) else v
                                    for k, v in asdict(config).items()}}, f, indent=2)
        f.write("\n")
    log.info("synthetic dataset: %d sources in %s", config.sources, out_dir)
    return manifest

"""
Planar video I/O: YUV4MPEG2 (Y4M) streams and raw planar YUV with a sidecar.

Only 8-bit 4:2:0 / 4:2:2 / 4:4:4 is decoded.  Analysis uses luma only; the
chroma planes are kept so a clip written back out is bit-identical.

Y4M layout:
    YUV4MPEG2 W1280 H720 F30:1 Ip A1:1 C420jpeg\\n
    FRAME\\n<Y plane><Cb plane><Cr plane>
    FRAME\\n...

Sidecar (raw .yuv next to a .json):
    {"width": 1280, "height": 720, "frame_rate": "30:1", "chroma_layout": "420"}
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import BinaryIO, Optional, Tuple

import numpy as np

from errors import (
    BoundsError,
    FormatError,
    ShapeError,
    TruncationError,
    UnsupportedFormatError,
)

log = logging.getLogger(__name__)

Y4M_SIGNATURE = b"YUV4MPEG2"
FRAME_MARKER = b"FRAME"

# Y4M colourspace tag -> chroma layout.  Anything with a bit-depth suffix
# (C420p10, C444p12, ...) or mono is rejected.
CHROMA_TAGS = {
    "420": "420",
    "420jpeg": "420",
    "420paldv": "420",
    "420mpeg2": "420",
    "422": "422",
    "444": "444",
}

# (horizontal divisor, vertical divisor) of each chroma plane
CHROMA_SUBSAMPLING = {
    "420": (2, 2),
    "422": (2, 1),
    "444": (1, 1),
}


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ClipMetadata:
    """Geometry and timing of a clip.

    `frame_count` is None for metadata parsed from a stream header, which does
    not carry a count; read_clip fills it in.
    """

    width: int
    height: int
    frame_rate: Fraction
    frame_count: Optional[int] = None
    chroma_layout: str = "420"
    bit_depth: int = 8

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise FormatError(f"invalid dimensions {self.width}x{self.height}")
        if self.frame_rate <= 0:
            raise FormatError(f"invalid frame rate {self.frame_rate}")
        if self.frame_count is not None and self.frame_count < 1:
            raise FormatError(f"invalid frame count {self.frame_count}")
        if self.chroma_layout not in CHROMA_SUBSAMPLING:
            raise UnsupportedFormatError(f"unsupported chroma layout {self.chroma_layout!r}")
        if self.bit_depth != 8:
            raise UnsupportedFormatError(f"unsupported bit depth {self.bit_depth}")

    @property
    def chroma_size(self) -> Tuple[int, int]:
        """(width, height) of each chroma plane."""
        dx, dy = CHROMA_SUBSAMPLING[self.chroma_layout]
        return -(-self.width // dx), -(-self.height // dy)

    @property
    def frame_bytes(self) -> int:
        cw, ch = self.chroma_size
        return self.width * self.height + 2 * cw * ch

    @property
    def duration(self) -> Fraction:
        """Clip length in seconds (exact)."""
        if self.frame_count is None:
            raise FormatError("frame count unknown until the clip is read")
        return Fraction(self.frame_count) / self.frame_rate


@dataclass(frozen=True)
class Plane:
    """One image plane; `samples` is a (height, width) array, row-major.

    Decoded planes are read-only uint8.  Filtered planes (csf_prefilter)
    carry float64 samples with the same geometry.
    """

    samples: np.ndarray

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise ShapeError(f"plane must be 2-D, got shape {self.samples.shape}")

    @property
    def width(self) -> int:
        return int(self.samples.shape[1])

    @property
    def height(self) -> int:
        return int(self.samples.shape[0])


@dataclass(frozen=True)
class Frame:
    luma: Plane
    chroma_b: Plane
    chroma_r: Plane


@dataclass(frozen=True)
class ClipRole:
    """reference, or coded(qp) with qp in 0..51."""

    kind: str = "reference"
    qp: Optional[int] = None

    def __post_init__(self):
        if self.kind == "reference":
            if self.qp is not None:
                raise FormatError("reference role carries no qp")
        elif self.kind == "coded":
            if self.qp is None or not 0 <= self.qp <= 51:
                raise FormatError(f"coded role needs qp in 0..51, got {self.qp}")
        else:
            raise FormatError(f"unknown clip role {self.kind!r}")

    @classmethod
    def coded(cls, qp: int) -> "ClipRole":
        return cls("coded", int(qp))

    @property
    def is_reference(self) -> bool:
        return self.kind == "reference"


REFERENCE = ClipRole()


@dataclass(frozen=True)
class Clip:
    """Decoded clip.  Immutable; sample arrays are flagged read-only."""

    metadata: ClipMetadata
    frames: Tuple[Frame, ...]
    role: ClipRole = REFERENCE
    name: str = ""
    _luma_volume: Optional[np.ndarray] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.metadata.frame_count != len(self.frames):
            raise ShapeError(
                f"metadata says {self.metadata.frame_count} frames, got {len(self.frames)}"
            )
        for f in self.frames:
            if (f.luma.width, f.luma.height) != (self.metadata.width, self.metadata.height):
                raise ShapeError("luma plane does not match clip dimensions")
            if (f.chroma_b.width, f.chroma_b.height) != self.metadata.chroma_size or \
               (f.chroma_r.width, f.chroma_r.height) != self.metadata.chroma_size:
                raise ShapeError("chroma plane does not match chroma layout")
        volume = np.stack([f.luma.samples for f in self.frames])
        volume.setflags(write=False)
        object.__setattr__(self, "_luma_volume", volume)

    @property
    def luma_volume(self) -> np.ndarray:
        """All luma planes as a read-only (frames, height, width) array."""
        return self._luma_volume

    @classmethod
    def from_luma(cls, luma: np.ndarray, frame_rate, role: ClipRole = REFERENCE,
                  name: str = "", chroma_value: int = 128) -> "Clip":
        """Build a 4:2:0 clip from a (frames, height, width) luma array.

        Chroma planes are flat `chroma_value`; handy for synthetic content.
        """
        luma = np.asarray(luma)
        if luma.ndim != 3:
            raise ShapeError(f"luma volume must be 3-D, got shape {luma.shape}")
        meta = ClipMetadata(
            width=int(luma.shape[2]),
            height=int(luma.shape[1]),
            frame_rate=Fraction(frame_rate),
            frame_count=int(luma.shape[0]),
        )
        cw, ch = meta.chroma_size
        chroma = np.full((ch, cw), chroma_value, dtype=np.uint8)
        chroma.setflags(write=False)
        frames = []
        for plane in luma:
            y = np.array(plane, dtype=np.uint8)
            y.setflags(write=False)
            frames.append(Frame(Plane(y), Plane(chroma), Plane(chroma)))
        return cls(meta, tuple(frames), role, name)

    def with_luma(self, luma: np.ndarray, role: ClipRole, name: Optional[str] = None) -> "Clip":
        """Same chroma and metadata, new luma volume (used for coded surrogates)."""
        luma = np.asarray(luma, dtype=np.uint8)
        if luma.shape != self.luma_volume.shape:
            raise ShapeError(f"luma volume {luma.shape} != {self.luma_volume.shape}")
        frames = []
        for src, plane in zip(self.frames, luma):
            y = np.array(plane)
            y.setflags(write=False)
            frames.append(Frame(Plane(y), src.chroma_b, src.chroma_r))
        return Clip(self.metadata, tuple(frames), role, self.name if name is None else name)


# ---------------------------------------------------------------------------
# header parsing
# ---------------------------------------------------------------------------
def _parse_rational(text: str) -> Fraction:
    try:
        if ":" in text:
            num, den = text.split(":", 1)
            return Fraction(int(num), int(den))
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise FormatError(f"bad frame rate {text!r}")


def parse_stream_header(stream: BinaryIO) -> ClipMetadata:
    """Read the Y4M signature line; leaves `stream` at the first FRAME marker."""
    line = stream.readline()
    if not line.endswith(b"\n"):
        raise FormatError("stream header is not newline-terminated")
    tokens = line.rstrip(b"\n").split(b" ")
    if not tokens or tokens[0] != Y4M_SIGNATURE:
        raise FormatError("missing YUV4MPEG2 signature")

    fields = {}
    for tok in tokens[1:]:
        if not tok:
            continue
        try:
            text = tok.decode("ascii")
        except UnicodeDecodeError:
            raise FormatError(f"non-ASCII header token {tok!r}")
        fields[text[0]] = text[1:]

    for key, label in (("W", "width"), ("H", "height"), ("F", "frame rate")):
        if key not in fields:
            raise FormatError(f"header is missing the {label} token ({key})")
    try:
        width, height = int(fields["W"]), int(fields["H"])
    except ValueError:
        raise FormatError(f"bad dimensions W{fields['W']} H{fields['H']}")

    tag = fields.get("C", "420")
    if tag not in CHROMA_TAGS:
        raise UnsupportedFormatError(f"unsupported colourspace C{tag}")

    return ClipMetadata(
        width=width,
        height=height,
        frame_rate=_parse_rational(fields["F"]),
        chroma_layout=CHROMA_TAGS[tag],
    )


# ---------------------------------------------------------------------------
# frame payloads
# ---------------------------------------------------------------------------
def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _split_payload(payload: bytes, metadata: ClipMetadata) -> Frame:
    w, h = metadata.width, metadata.height
    cw, ch = metadata.chroma_size
    buf = np.frombuffer(payload, dtype=np.uint8)
    y = buf[: w * h].reshape(h, w)
    cb = buf[w * h: w * h + cw * ch].reshape(ch, cw)
    cr = buf[w * h + cw * ch:].reshape(ch, cw)
    return Frame(Plane(y), Plane(cb), Plane(cr))


def read_clip(stream: BinaryIO, metadata: ClipMetadata, role: ClipRole = REFERENCE,
              name: str = "") -> Clip:
    """Decode every FRAME that follows the header.

    The returned metadata's frame_count is the number of frames actually read.
    """
    frames = []
    size = metadata.frame_bytes
    while True:
        marker = stream.readline()
        if not marker:
            break
        if not marker.startswith(FRAME_MARKER) or not marker.endswith(b"\n"):
            raise FormatError(f"expected FRAME marker before frame {len(frames)}")
        payload = _read_exact(stream, size)
        if len(payload) != size:
            raise TruncationError(
                f"frame {len(frames)} truncated: {len(payload)} of {size} bytes"
            )
        frames.append(_split_payload(payload, metadata))

    if not frames:
        raise TruncationError("stream holds no frames")
    log.debug("decoded %d frames of %dx%d", len(frames), metadata.width, metadata.height)
    return Clip(replace(metadata, frame_count=len(frames)), tuple(frames), role, name)


def read_raw_clip(stream: BinaryIO, metadata: ClipMetadata, role: ClipRole = REFERENCE,
                  name: str = "") -> Clip:
    """Decode headerless planar YUV; geometry comes from the sidecar."""
    frames = []
    size = metadata.frame_bytes
    while True:
        payload = _read_exact(stream, size)
        if not payload:
            break
        if len(payload) != size:
            raise TruncationError(
                f"frame {len(frames)} truncated: {len(payload)} of {size} bytes"
            )
        frames.append(_split_payload(payload, metadata))
    if not frames:
        raise TruncationError("stream holds no frames")
    return Clip(replace(metadata, frame_count=len(frames)), tuple(frames), role, name)


def read_sidecar(path: str) -> ClipMetadata:
    """Metadata record for a raw .yuv file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"sidecar {path}: line {e.lineno}, column {e.colno}: {e.msg}")
    for key in ("width", "height", "frame_rate"):
        if key not in data:
            raise FormatError(f"sidecar {path} is missing '{key}'")
    layout = str(data.get("chroma_layout", "420"))
    if layout not in CHROMA_SUBSAMPLING:
        raise UnsupportedFormatError(f"sidecar {path}: unsupported chroma layout {layout!r}")
    return ClipMetadata(
        width=int(data["width"]),
        height=int(data["height"]),
        frame_rate=_parse_rational(str(data["frame_rate"])),
        chroma_layout=layout,
        bit_depth=int(data.get("bit_depth", 8)),
    )


def load_clip(path: str, role: ClipRole = REFERENCE, name: str = "") -> Clip:
    """Open a .y4m file, or a raw file with a `<path>.json` / `<stem>.json` sidecar."""
    if path.lower().endswith(".y4m"):
        with open(path, "rb") as f:
            meta = parse_stream_header(f)
            return read_clip(f, meta, role, name)

    stem, _ = os.path.splitext(path)
    for sidecar in (path + ".json", stem + ".json"):
        if os.path.exists(sidecar):
            meta = read_sidecar(sidecar)
            with open(path, "rb") as f:
                return read_raw_clip(f, meta, role, name)
    raise FormatError(f"{path}: not a .y4m file and no sidecar metadata found")


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------
def _chroma_tag(layout: str) -> str:
    return {"420": "420jpeg", "422": "422", "444": "444"}[layout]


def write_y4m(clip: Clip, stream: BinaryIO) -> None:
    m = clip.metadata
    rate = Fraction(m.frame_rate)
    header = f"YUV4MPEG2 W{m.width} H{m.height} F{rate.numerator}:{rate.denominator} " \
             f"Ip A1:1 C{_chroma_tag(m.chroma_layout)}\n"
    stream.write(header.encode("ascii"))
    for f in clip.frames:
        stream.write(FRAME_MARKER + b"\n")
        stream.write(np.ascontiguousarray(f.luma.samples, dtype=np.uint8).tobytes())
        stream.write(np.ascontiguousarray(f.chroma_b.samples, dtype=np.uint8).tobytes())
        stream.write(np.ascontiguousarray(f.chroma_r.samples, dtype=np.uint8).tobytes())


def save_clip(clip: Clip, path: str) -> None:
    with open(path, "wb") as f:
        write_y4m(clip, f)


# ---------------------------------------------------------------------------
# access
# ---------------------------------------------------------------------------
def luma(clip: Clip, frame_index: int) -> Plane:
    """Luma plane of one frame (shared, not copied)."""
    if not 0 <= frame_index < len(clip.frames):
        raise BoundsError(f"frame {frame_index} out of range 0..{len(clip.frames) - 1}")
    return clip.frames[frame_index].luma


def check_aligned(reference: Clip, coded: Clip) -> None:
    """Reference and coded clip must share geometry and frame count."""
    a, b = reference.metadata, coded.metadata
    if (a.width, a.height) != (b.width, b.height):
        raise ShapeError(f"{coded.name or 'coded clip'}: {b.width}x{b.height} "
                         f"vs reference {a.width}x{a.height}")
    if a.frame_count != b.frame_count:
        raise ShapeError(f"{coded.name or 'coded clip'}: {b.frame_count} frames "
                         f"vs reference {a.frame_count}")

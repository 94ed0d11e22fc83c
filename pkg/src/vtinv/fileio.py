"""Readers and writers for all corpus artifacts.

Formats:

* FeatureFile (``.vtaf``): magic ``VTAF``, version u16=1, rows u32, cols
  u32, frame_rate f32, then rows*cols little-endian f32, row-major.
  Header is 18 bytes.
* ContourFileV1 (``.json``): pixel coordinates on disk; converted to
  millimeters on read using the file's own ``pixel_mm``.
* Phone labels: 3-column TSV ``start_s<TAB>end_s<TAB>label``.
* Images: binary PGM (P5), maxval 255 or 65535 (16-bit samples are
  big-endian per the PGM convention), scaled to [0, 1] on read.
* WAV: 16-bit PCM mono at 16 kHz only; anything else is rejected.

Readers never coerce silently; every deviation raises a FormatError
subclass.  Payloads are stored f32 for economy, all in-memory values are
float64.
"""

from __future__ import annotations

import json
import struct
import wave
from pathlib import Path

import numpy as np

from . import datamodel as dm
from .errors import (
    BadMagicError,
    FormatError,
    NonFinitePayloadError,
    ParseError,
    StructuralError,
    TruncatedFileError,
)

FEATURE_MAGIC = b"VTAF"
FEATURE_VERSION = 1
FEATURE_HEADER = struct.Struct("<4sHIIf")  # magic, version, rows, cols, frame_rate


# ---------------------------------------------------------------------------
# FeatureFile
# ---------------------------------------------------------------------------

def write_feature_file(path, matrix: np.ndarray, frame_rate_hz: float) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise StructuralError(f"feature matrix must be 2-D, got {m.ndim}-D")
    if m.size and not np.all(np.isfinite(m)):
        raise StructuralError("feature matrix contains non-finite values")
    header = FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, m.shape[0], m.shape[1],
                                 float(frame_rate_hz))
    payload = m.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_feature_file(path):
    """Read a FeatureFile; returns (matrix float64 (T, F), frame_rate_hz)."""
    raw = Path(path).read_bytes()
    if len(raw) < FEATURE_HEADER.size:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes, header needs {FEATURE_HEADER.size}")
    magic, version, rows, cols, rate = FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise BadMagicError(f"{path}: unsupported version {version}")
    expected = FEATURE_HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise TruncatedFileError(f"{path}: size {len(raw)} != expected {expected}")
    payload = np.frombuffer(raw, dtype="<f4", offset=FEATURE_HEADER.size)
    if payload.size and not np.all(np.isfinite(payload)):
        raise NonFinitePayloadError(f"{path}: payload contains non-finite values")
    return payload.astype(np.float64).reshape(rows, cols), float(rate)


# ---------------------------------------------------------------------------
# ContourFileV1
# ---------------------------------------------------------------------------

def write_contours(path, acquisition: dm.Acquisition, pixel_mm: float) -> None:
    """Write contour frames as ContourFileV1 JSON (pixel coordinates)."""
    frames = []
    for f in acquisition.frames:
        arts = {}
        for art, contour in sorted(f.contours.items()):
            arts[art.key] = {
                "x": (contour.x / pixel_mm).tolist(),
                "y": (contour.y / pixel_mm).tolist(),
            }
        frames.append({"index": f.frame_index, "articulators": arts})
    doc = {
        "acquisition_id": acquisition.id,
        "session_id": acquisition.session_id,
        "pixel_mm": pixel_mm,
        "frames": frames,
    }
    Path(path).write_text(json.dumps(doc))


def read_contours(path) -> dm.Acquisition:
    """Read ContourFileV1 JSON; coordinates come back in millimeters."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e}") from None
    for key in ("acquisition_id", "session_id", "pixel_mm", "frames"):
        if key not in doc:
            raise FormatError(f"{path}: missing key {key!r}")
    pixel_mm = float(doc["pixel_mm"])
    if not pixel_mm > 0:
        raise FormatError(f"{path}: pixel_mm must be positive, got {pixel_mm}")
    frames = []
    last_index = -1
    for fr in doc["frames"]:
        index = int(fr["index"])
        if index <= last_index:
            raise FormatError(f"{path}: frame indices not strictly increasing at {index}")
        last_index = index
        contours = {}
        for name, arrs in fr["articulators"].items():
            art = dm.ArticulatorId.from_key(name)
            x = np.asarray(arrs["x"], dtype=np.float64)
            y = np.asarray(arrs["y"], dtype=np.float64)
            if x.shape != (dm.POINTS_PER_CONTOUR,) or y.shape != (dm.POINTS_PER_CONTOUR,):
                raise FormatError(
                    f"{path}: articulator {name} arrays must have length 50, "
                    f"got {x.shape[0]}/{y.shape[0]}"
                )
            contours[art] = dm.Contour(np.stack([x * pixel_mm, y * pixel_mm], axis=1))
        frames.append(dm.ContourFrame(frame_index=index, contours=contours))
    acq = dm.Acquisition(id=doc["acquisition_id"], session_id=doc["session_id"], frames=frames)
    acq.validate()
    return acq


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------

def read_wav_mono16k(path) -> np.ndarray:
    """Read 16-bit PCM mono WAV at 16 kHz into float64 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            rate = w.getframerate()
            if rate != dm.AUDIO_RATE_HZ:
                raise FormatError(f"{path}: sample rate {rate}, expected {dm.AUDIO_RATE_HZ}")
            if w.getnchannels() != 1:
                raise FormatError(f"{path}: {w.getnchannels()} channels, expected mono")
            if w.getsampwidth() != 2:
                raise FormatError(f"{path}: {8 * w.getsampwidth()}-bit samples, expected 16-bit PCM")
            data = w.readframes(w.getnframes())
    except wave.Error as e:
        raise FormatError(f"{path}: not a PCM WAV file: {e}") from None
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return samples


def write_wav_mono16k(path, samples: np.ndarray) -> None:
    """Write float samples in [-1, 1] as 16-bit PCM mono at 16 kHz."""
    s = np.asarray(samples, dtype=np.float64)
    pcm = np.clip(np.rint(s * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(dm.AUDIO_RATE_HZ)
        w.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# Phone labels
# ---------------------------------------------------------------------------

def read_phone_labels(path) -> list:
    """Parse a 3-column TSV of phone segments; returns them sorted by start.

    Raises ParseError with the offending line number(s) on malformed
    rows, non-positive durations, or overlapping segments.
    """
    segments = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        try:
            start, end = float(parts[0]), float(parts[1])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric time") from None
        if not (end > start >= 0.0):
            raise ParseError(f"{path}:{lineno}: requires end > start >= 0, got [{start}, {end}]")
        segments.append((start, end, parts[2], lineno))
    segments.sort(key=lambda s: (s[0], s[1]))
    for a, b in zip(segments, segments[1:]):
        if b[0] < a[1]:
            raise ParseError(f"{path}: segments on lines {a[3]} and {b[3]} overlap")
    return [dm.PhoneSegment(label=s[2], start_s=s[0], end_s=s[1]) for s in segments]


def write_phone_labels(path, phones: list) -> None:
    lines = [f"{p.start_s:.6f}\t{p.end_s:.6f}\t{p.label}" for p in phones]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# PGM images
# ---------------------------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) into float64 intensities in [0, 1]."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise BadMagicError(f"{path}: only binary PGM (P5) is supported, got {raw[:2]!r}")

    # header = magic, width, height, maxval as whitespace/comment-separated tokens
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedFileError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise ParseError(f"{path}: non-numeric PGM header fields") from None
    if maxval not in (255, 65535):
        raise FormatError(f"{path}: maxval must be 255 or 65535, got {maxval}")
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    need = width * height * dtype.itemsize
    body = raw[pos : pos + need]
    if len(body) != need:
        raise TruncatedFileError(f"{path}: pixel data {len(body)} bytes, expected {need}")
    pixels = np.frombuffer(body, dtype=dtype).astype(np.float64).reshape(height, width)
    return pixels / maxval


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    """Write intensities in [0, 1] as binary PGM."""
    if maxval not in (255, 65535):
        raise FormatError(f"maxval must be 255 or 65535, got {maxval}")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise StructuralError(f"image must be 2-D, got {img.ndim}-D")
    q = np.clip(np.rint(img * maxval), 0, maxval)
    data = q.astype(">u2" if maxval == 65535 else "u1").tobytes()
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + data)

"""Shared domain types and the flattening convention for contour frames.

Coordinate convention (fixed for the whole toolkit): image coordinates,
origin at the top-left corner, x grows rightward, y grows downward, units
are millimeters once ingested.  Contours are ordered polylines of exactly
50 points.

Flattening convention (single source of truth for training, inference,
IO and evaluation): the 8 predicted articulators in enum-code order, and
for each articulator its 50 x coordinates followed by its 50 y
coordinates, giving a length-800 vector.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError

POINTS_PER_CONTOUR = 50
COORDS_PER_ARTICULATOR = 2 * POINTS_PER_CONTOUR
FRAME_RATE_HZ = 50.0
AUDIO_RATE_HZ = 16000


class ArticulatorId(enum.IntEnum):
    """Stable integer codes for articulators and landmarks.

    Codes 0..7 are the predicted articulators; 8..9 are landmarks that
    are carried through IO but never appear in model outputs.
    """

    ARYTENOID = 0
    EPIGLOTTIS = 1
    LOWER_LIP = 2
    PHARYNGEAL_WALL = 3
    VELUM_MIDLINE = 4
    TONGUE = 5
    UPPER_LIP = 6
    VOCAL_FOLDS = 7
    LOWER_INCISOR = 8
    UPPER_INCISOR = 9

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def from_key(cls, name: str) -> "ArticulatorId":
        try:
            return cls[name.upper()]
        except KeyError:
            raise StructuralError(f"unknown articulator name: {name!r}") from None


PREDICTED_ARTICULATORS = tuple(a for a in ArticulatorId if a <= ArticulatorId.VOCAL_FOLDS)
LANDMARKS = (ArticulatorId.LOWER_INCISOR, ArticulatorId.UPPER_INCISOR)
FLAT_DIM = len(PREDICTED_ARTICULATORS) * COORDS_PER_ARTICULATOR  # 800


@dataclass(frozen=True)
class Contour:
    """One articulator contour: 50 ordered (x, y) points in millimeters."""

    points: np.ndarray  # (50, 2) float64

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (POINTS_PER_CONTOUR, 2):
            raise StructuralError(f"contour must be 50 (x, y) points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise StructuralError("contour contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]


@dataclass(frozen=True)
class ContourFrame:
    """All contours of one RT-MRI frame (8 articulators + optional landmarks)."""

    frame_index: int
    contours: dict  # ArticulatorId -> Contour

    def __post_init__(self):
        missing = [a.key for a in PREDICTED_ARTICULATORS if a not in self.contours]
        if missing:
            raise StructuralError(f"frame {self.frame_index} missing articulators: {missing}")
        if self.frame_index < 0:
            raise StructuralError(f"negative frame index {self.frame_index}")

    @property
    def time_s(self) -> float:
        return self.frame_index / FRAME_RATE_HZ


@dataclass(frozen=True)
class PhoneSegment:
    label: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (self.end_s > self.start_s >= 0.0):
            raise StructuralError(
                f"phone segment requires end > start >= 0, got [{self.start_s}, {self.end_s}]"
            )


@dataclass(frozen=True)
class PixelGeometry:
    """Pixel spacing of the acquisition; reference corpus value 1.62 mm/px."""

    pixel_mm: float = 1.62
    image_size: int = 136

    def __post_init__(self):
        if not self.pixel_mm > 0:
            raise StructuralError(f"pixel_mm must be positive, got {self.pixel_mm}")


@dataclass
class Acquisition:
    """One recording: contour frames plus audio and phone segmentation."""

    id: str
    session_id: str
    frames: list = field(default_factory=list)  # [ContourFrame], strictly increasing index
    audio: np.ndarray | None = None  # mono float64 at 16 kHz
    phones: list = field(default_factory=list)  # [PhoneSegment], sorted, non-overlapping

    def validate(self) -> None:
        idx = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise StructuralError(f"acquisition {self.id}: frame indices not strictly increasing")
        for a, b in zip(self.phones, self.phones[1:]):
            if b.start_s < a.end_s:
                raise StructuralError(
                    f"acquisition {self.id}: phone segments overlap at {b.start_s}"
                )
        if self.audio is not None and self.phones:
            dur = len(self.audio) / AUDIO_RATE_HZ
            if self.phones[-1].end_s > dur + 1e-9:
                raise StructuralError(
                    f"acquisition {self.id}: phones extend past audio end ({self.phones[-1].end_s} > {dur})"
                )


def flatten_frame(frame: ContourFrame) -> np.ndarray:
    """Flatten the 8 predicted articulators into a length-800 vector.

    Layout: articulators in code order, each contributing its 50 x
    coordinates then its 50 y coordinates.
    """
    out = np.empty(FLAT_DIM, dtype=np.float64)
    for art in PREDICTED_ARTICULATORS:
        c = frame.contours.get(art)
        if c is None:
            raise StructuralError(f"frame {frame.frame_index} missing articulator {art.key}")
        base = int(art) * COORDS_PER_ARTICULATOR
        out[base : base + POINTS_PER_CONTOUR] = c.x
        out[base + POINTS_PER_CONTOUR : base + COORDS_PER_ARTICULATOR] = c.y
    return out


def unflatten_frame(v: np.ndarray, frame_index: int = 0) -> ContourFrame:
    """Exact inverse of :func:`flatten_frame` (landmarks are not restored)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (FLAT_DIM,):
        raise StructuralError(f"flattened frame must have length {FLAT_DIM}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise StructuralError("flattened frame contains non-finite values")
    contours = {}
    for art in PREDICTED_ARTICULATORS:
        base = int(art) * COORDS_PER_ARTICULATOR
        pts = np.stack(
            [
                v[base : base + POINTS_PER_CONTOUR],
                v[base + POINTS_PER_CONTOUR : base + COORDS_PER_ARTICULATOR],
            ],
            axis=1,
        )
        contours[art] = Contour(pts)
    return ContourFrame(frame_index=frame_index, contours=contours)


def frames_to_matrix(frames: list) -> np.ndarray:
    """Stack frames into a (T, 800) matrix in frame order."""
    return np.stack([flatten_frame(f) for f in frames]) if frames else np.empty((0, FLAT_DIM))

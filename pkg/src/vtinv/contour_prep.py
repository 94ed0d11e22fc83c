"""Moving-average normalization of contour trajectories.

Each coordinate has its +-30-frame moving mean subtracted; the residual
is divided by a per-session, per-coordinate standard deviation pooled
over the whole session's residuals.  The state (moving means + std) is
retained so denormalization is exact.

Evaluation convention: predictions on unseen data are denormalized with
the state computed from the ground-truth test contours.  This is an
evaluation-only artifact, documented here because the normalized target
cannot be inverted without a moving mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import StructuralError
from .features import STD_FLOOR

log = logging.getLogger(__name__)

WINDOW_RADIUS = 30


def moving_mean(x: np.ndarray, radius: int = WINDOW_RADIUS) -> np.ndarray:
    """Row t = mean of rows max(0, t-radius)..min(T-1, t+radius).

    Computed by summing the shifted copies in window order, so the
    result matches a direct left-to-right summation bit for bit.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise StructuralError(f"need a non-empty (T, F) matrix, got shape {x.shape}")
    t = x.shape[0]
    acc = np.zeros_like(x)
    counts = np.zeros(t)
    for d in range(-radius, radius + 1):
        lo = max(0, -d)
        hi = min(t, t - d)
        if hi <= lo:  # |d| >= t: shift leaves no overlap
            continue
        acc[lo:hi] += x[lo + d : hi + d]
        counts[lo:hi] += 1.0
    return acc / counts[:, None]


@dataclass
class ContourNormState:
    """Everything needed for an exact inverse of normalize_contours."""

    session_id: str
    moving_means: np.ndarray  # (T, 800), aligned 1:1 with frames
    std: np.ndarray           # (800,), floored at STD_FLOOR
    window_radius: int = WINDOW_RADIUS


def fit_session_std(trajectories: list, radius: int = WINDOW_RADIUS) -> np.ndarray:
    """Per-coordinate std of moving-mean residuals pooled over a session."""
    residuals = [np.asarray(x, np.float64) - moving_mean(x, radius) for x in trajectories]
    pooled = np.concatenate(residuals, axis=0)
    if pooled.shape[0] < 2:
        raise StructuralError("need at least 2 frames in the session to fit std")
    std = pooled.std(axis=0)
    floored = std < STD_FLOOR
    if np.any(floored):
        log.warning("%d constant contour coordinates, std floored at %g",
                    int(floored.sum()), STD_FLOOR)
        std = np.maximum(std, STD_FLOOR)
    return std


def normalize_contours(x: np.ndarray, session_id: str = "",
                       session_std: np.ndarray | None = None,
                       radius: int = WINDOW_RADIUS):
    """Returns (normalized (T, 800), ContourNormState).

    When `session_std` is omitted the session is taken to be this single
    trajectory; pass a pooled std (fit_session_std) when the session has
    several acquisitions.
    """
    x = np.asarray(x, dtype=np.float64)
    means = moving_mean(x, radius)
    if session_std is None:
        session_std = fit_session_std([x], radius)
    std = np.asarray(session_std, dtype=np.float64)
    if std.shape != (x.shape[1],):
        raise StructuralError(f"std shape {std.shape} does not match {x.shape[1]} coordinates")
    state = ContourNormState(session_id=session_id, moving_means=means, std=std, window_radius=radius)
    return (x - means) / std, state


def denormalize_contours(y: np.ndarray, state: ContourNormState) -> np.ndarray:
    """Exact inverse of normalize_contours given the stored state."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != state.moving_means.shape:
        raise StructuralError(
            f"normalized shape {y.shape} does not match state {state.moving_means.shape}"
        )
    return y * state.std + state.moving_means

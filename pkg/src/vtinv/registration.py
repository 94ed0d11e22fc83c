"""Rigid alignment of images against a session reference.

The transform model is rotation by theta (degrees) about the image
center followed by translation (dx, dy) in pixels, applied to the moving
image so it best matches the reference.  Scoring is Pearson-style
normalized cross-correlation restricted to a static-anatomy mask; the
search is exhaustive over a fixed grid (default +-4 px step 1,
+-4 deg step 0.5) and ties are broken deterministically by smallest
(|theta|, |dx|+|dy|, dy, dx).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, StructuralError


@dataclass(frozen=True)
class RigidTransform:
    dx: float = 0.0
    dy: float = 0.0
    theta_deg: float = 0.0


@dataclass(frozen=True)
class SearchGrid:
    """Search ranges; steps must divide the ranges they span."""

    max_shift_px: float = 4.0
    shift_step_px: float = 1.0
    max_rot_deg: float = 4.0
    rot_step_deg: float = 0.5

    def shift_values(self) -> np.ndarray:
        if self.shift_step_px <= 0 or self.rot_step_deg <= 0:
            raise StructuralError("grid steps must be positive")
        n = int(round(self.max_shift_px / self.shift_step_px))
        return np.arange(-n, n + 1) * self.shift_step_px

    def rot_values(self) -> np.ndarray:
        n = int(round(self.max_rot_deg / self.rot_step_deg))
        return np.arange(-n, n + 1) * self.rot_step_deg


def ncc_masked(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """Pearson correlation of the two images over the masked pixels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if a.shape != b.shape or a.shape != mask.shape:
        raise StructuralError(f"shape mismatch: {a.shape}, {b.shape}, mask {mask.shape}")
    va = a[mask]
    vb = b[mask]
    if va.size < 2:
        raise DegenerateDataError(f"mask selects {va.size} pixels, need at least 2")
    da = va - va.mean()
    db = vb - vb.mean()
    denom2 = np.dot(da, da) * np.dot(db, db)
    if denom2 <= 0.0:
        raise DegenerateDataError("zero variance under mask, correlation undefined")
    return float(np.dot(da, db) / np.sqrt(denom2))


def _resample(img: np.ndarray, t: RigidTransform, xs, ys, cx: float, cy: float):
    """Bilinear samples of the transformed image at destination coords
    (xs, ys); out-of-bounds source neighbors contribute 0."""
    h, w = img.shape
    # inverse map: source = R(-theta) (dest - c - t) + c
    th = np.deg2rad(t.theta_deg)
    cos_t, sin_t = np.cos(th), np.sin(th)
    qx = xs - cx - t.dx
    qy = ys - cy - t.dy
    sx = cos_t * qx + sin_t * qy + cx
    sy = -sin_t * qx + cos_t * qy + cy

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    def sample(yi, xi):
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = np.zeros_like(sx)
        vals[inside] = img[yi[inside], xi[inside]]
        return vals

    v00 = sample(y0, x0)
    v01 = sample(y0, x0 + 1)
    v10 = sample(y0 + 1, x0)
    v11 = sample(y0 + 1, x0 + 1)
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def apply_rigid(img: np.ndarray, t: RigidTransform, center=None) -> np.ndarray:
    """Rotate about `center` then translate; bilinear sampling, zero padding.

    `center` defaults to the image center ((w-1)/2, (h-1)/2) in (x, y).
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if center is None:
        center = ((w - 1) / 2.0, (h - 1) / 2.0)
    cx, cy = center
    ys, xs = np.mgrid[0:h, 0:w]
    return _resample(img, t, xs, ys, cx, cy)


def _tie_key(dx: float, dy: float, theta: float):
    return (abs(theta), abs(dx) + abs(dy), dy, dx)


def register(img: np.ndarray, ref: np.ndarray, mask: np.ndarray,
             grid: SearchGrid = SearchGrid()):
    """Exhaustive grid search for the transform maximizing masked NCC.

    Returns (RigidTransform, score).  When every dx/dy grid value is an
    integer, each rotation is resampled once on a canvas expanded by the
    maximum shift and translations become window crops.  Destination
    coordinates and centers are all integers or half-integers, so the
    sample positions (and hence the scores) are bit-identical to direct
    per-transform evaluation.  NCC failures at individual grid points are
    skipped; the error propagates only if the whole grid is undefined.
    """
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise StructuralError(f"image {img.shape} vs reference {ref.shape}")
    h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    shifts = grid.shift_values()
    rots = grid.rot_values()
    all_integer = np.allclose(shifts, np.rint(shifts))
    pad = int(round(np.max(np.abs(shifts)))) if len(shifts) else 0

    best = None  # (score, tie_key, transform)
    last_error = None
    for theta in rots:
        if all_integer:
            ys, xs = np.mgrid[-pad : h + pad, -pad : w + pad]
            expanded = _resample(img, RigidTransform(0.0, 0.0, theta),
                                 xs, ys, cx, cy)
        for dy in shifts:
            for dx in shifts:
                if all_integer:
                    r0 = pad - int(round(dy))
                    c0 = pad - int(round(dx))
                    moved = expanded[r0 : r0 + h, c0 : c0 + w]
                else:
                    moved = apply_rigid(img, RigidTransform(dx, dy, theta))
                try:
                    score = ncc_masked(moved, ref, mask)
                except DegenerateDataError as e:
                    last_error = e
                    continue
                key = _tie_key(dx, dy, theta)
                if best is None or score > best[0] or (score == best[0] and key < best[1]):
                    best = (score, key, RigidTransform(float(dx), float(dy), float(theta)))
    if best is None:
        raise DegenerateDataError(f"NCC undefined at every grid point: {last_error}")
    return best[2], best[0]

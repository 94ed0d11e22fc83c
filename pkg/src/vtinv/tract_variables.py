"""Tract variables: scalar constriction measures derived from a contour frame.

Nine variables are produced: six minimum-distance constrictions (LA, LD,
TTCD, TBCD, TRCD, VEL), lip protrusion (LP), the tongue-root constriction
location along the pharyngeal wall (TRCL), and larynx height (LH).  A
tenth dimensionless series, the velum PC1 score, comes from a PCA model
fitted over the velum midline points.

Point-range conventions live in ``data/tv_defaults.json``, not in code:
they are corpus annotation conventions, not algorithmic choices.  The
pharyngeal wall contour is assumed ordered from its topmost point
downward, so arclength from index 0 measures position along the tract.
All distances are in whatever unit the contours carry (mm after
denormalization).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .datamodel import ArticulatorId, ContourFrame
from .errors import DegenerateDataError, StructuralError

TV_NAMES = ("LA", "LP", "LD", "TTCD", "TBCD", "TRCD", "TRCL", "VEL", "LH")
MIN_DISTANCE_TVS = ("LA", "LD", "TTCD", "TBCD", "TRCD", "VEL")
VELUM_MIDLINE_POINTS = 25


@dataclass(frozen=True)
class TvDefinition:
    name: str
    articulator_a: ArticulatorId
    range_a: tuple[int, int]  # inclusive point index range
    articulator_b: ArticulatorId
    range_b: tuple[int, int]
    mode: str = "min_distance"

    def __post_init__(self):
        for lo, hi in (self.range_a, self.range_b):
            if not (0 <= lo <= hi <= 49):
                raise StructuralError(
                    f"tract variable {self.name}: range [{lo},{hi}] outside [0,49]")
        if self.mode not in ("min_distance", "axis_projection"):
            raise StructuralError(f"unknown tract-variable mode {self.mode!r}")
        if self.mode == "min_distance" and self.articulator_a == self.articulator_b:
            raise StructuralError(
                f"tract variable {self.name}: min_distance needs two articulators")


@dataclass
class TractVariableSeries:
    name: str
    values: np.ndarray  # (T,)


@dataclass
class VelumPcaModel:
    """PC1 of the standardized velum midline configuration.

    The 25 midline points are flattened as [x0..x24, y0..y24].  ``scale``
    is the per-coordinate std used for standardization; scores are
    ``polarity * component . ((v - mean) / scale)``, so positive scores
    mean port opening (score correlates positively with the VEL
    distance).
    """

    mean: np.ndarray  # (50,)
    scale: np.ndarray  # (50,)
    component: np.ndarray  # (50,), unit norm
    explained_variance_ratio: float
    polarity: int = 1


def load_tv_defaults():
    """Default definitions and conventions shipped with the package.

    Returns (list[TvDefinition], anterior_sign).
    """
    raw = json.loads(
        resources.files("vtinv").joinpath("data/tv_defaults.json").read_text())
    return parse_tv_defs(raw)


def parse_tv_defs(raw: dict):
    try:
        anterior_sign = float(raw["anterior_sign"])
        defs = [
            TvDefinition(
                name=d["name"],
                articulator_a=ArticulatorId.from_key(d["articulator_a"]),
                range_a=tuple(d["range_a"]),
                articulator_b=ArticulatorId.from_key(d["articulator_b"]),
                range_b=tuple(d["range_b"]),
                mode=d.get("mode", "min_distance"),
            )
            for d in raw["definitions"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise StructuralError(f"bad tract-variable definition file: {exc}") from exc
    return defs, anterior_sign


def _points(frame: ContourFrame, art: ArticulatorId, rng: tuple[int, int]) -> np.ndarray:
    if art not in frame.contours:
        raise StructuralError(f"articulator {art.key} missing from frame")
    return frame.contours[art].points[rng[0] : rng[1] + 1]


def min_distance_pair(points_a: np.ndarray, points_b: np.ndarray):
    """Closest pair between two point sets.

    Returns (distance, index_a, index_b); ties resolved to the smallest
    (index_a, index_b) lexicographically.
    """
    if len(points_a) == 0 or len(points_b) == 0:
        raise StructuralError("empty point range")
    dx = points_a[:, None, 0] - points_b[None, :, 0]
    dy = points_a[:, None, 1] - points_b[None, :, 1]
    d2 = dx * dx + dy * dy
    flat = int(np.argmin(d2))  # row-major argmin = lexicographic tie-break
    ia, ib = divmod(flat, d2.shape[1])
    return float(np.sqrt(d2[ia, ib])), ia, ib


def tv_min_distance(frame: ContourFrame, tv: TvDefinition) -> float:
    """Minimum Euclidean distance between the two configured point ranges."""
    a = _points(frame, tv.articulator_a, tv.range_a)
    b = _points(frame, tv.articulator_b, tv.range_b)
    return min_distance_pair(a, b)[0]


def palate_reference(frame: ContourFrame, anterior_sign: float = 1.0) -> np.ndarray:
    """Anterior extremity of the upper-incisor landmark (hard-palate edge)."""
    pts = _points(frame, ArticulatorId.UPPER_INCISOR, (0, 49))
    return pts[int(np.argmax(anterior_sign * pts[:, 0]))]


def tv_lip_protrusion(frame: ContourFrame, anterior_sign: float = 1.0) -> float:
    """Signed anterior x-displacement of the foremost upper-lip point
    relative to the upper-incisor reference; positive = protruded."""
    lip = _points(frame, ArticulatorId.UPPER_LIP, (0, 49))
    ref = palate_reference(frame, anterior_sign)
    foremost = lip[int(np.argmax(anterior_sign * lip[:, 0]))]
    return float(anterior_sign * (foremost[0] - ref[0]))


def wall_arclength(wall: np.ndarray) -> np.ndarray:
    """Cumulative polyline length from wall point 0 to each point."""
    seg = np.sqrt(np.sum(np.diff(wall, axis=0) ** 2, axis=1))
    return np.concatenate([[0.0], np.cumsum(seg)])


def tv_trcl(frame: ContourFrame, trcd_def: TvDefinition) -> float:
    """Arclength along the pharyngeal wall of the point realizing TRCD."""
    tongue = _points(frame, trcd_def.articulator_a, trcd_def.range_a)
    wall = _points(frame, trcd_def.articulator_b, trcd_def.range_b)
    _, _, iw = min_distance_pair(tongue, wall)
    return float(wall_arclength(wall)[iw])


def pharyngeal_axis(wall: np.ndarray) -> np.ndarray:
    """Unit principal direction of the wall points, oriented downward (+y)."""
    centered = wall - wall.mean(axis=0)
    cov = centered.T @ centered / len(wall)
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] <= 0.0:
        raise DegenerateDataError("pharyngeal wall points are coincident")
    axis = evecs[:, -1]
    if axis[1] < 0.0 or (axis[1] == 0.0 and axis[0] < 0.0):
        axis = -axis
    return axis


def larynx_height(frame: ContourFrame, anterior_sign: float = 1.0) -> float:
    """|projection of (glottis centroid - palate reference) on the
    pharyngeal axis|; proxy for vocal-tract length."""
    folds = _points(frame, ArticulatorId.VOCAL_FOLDS, (0, 49))
    wall = _points(frame, ArticulatorId.PHARYNGEAL_WALL, (0, 49))
    glottis = folds.mean(axis=0)
    ref = palate_reference(frame, anterior_sign)
    axis = pharyngeal_axis(wall)
    return float(abs((glottis - ref) @ axis))


# -- velum PCA ---------------------------------------------------------------


def velum_vector(frame: ContourFrame) -> np.ndarray:
    """Velum midline points 0..24 flattened to [x0..x24, y0..y24]."""
    pts = _points(frame, ArticulatorId.VELUM_MIDLINE, (0, VELUM_MIDLINE_POINTS - 1))
    return np.concatenate([pts[:, 0], pts[:, 1]])


def fit_velum_pca(frames, vel_def: TvDefinition | None = None) -> VelumPcaModel:
    """Fit PC1 of the standardized velum midline over a whole dataset.

    ``frames`` should include silences.  Polarity is set so that scores
    correlate positively with the VEL constriction distance (positive =
    port opening).
    """
    frames = list(frames)
    if len(frames) < 50:
        raise StructuralError(f"velum PCA needs >= 50 frames, got {len(frames)}")
    if vel_def is None:
        vel_def = next(d for d in load_tv_defaults()[0] if d.name == "VEL")
    x = np.stack([velum_vector(f) for f in frames])
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    if np.any(scale == 0.0):
        raise DegenerateDataError("velum coordinate with zero variance")
    z = (x - mean) / scale
    cov = z.T @ z / len(z)
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] <= 0.0:
        raise DegenerateDataError("velum covariance is rank deficient")
    component = evecs[:, -1]
    evr = float(evals[-1] / np.sum(evals))
    model = VelumPcaModel(mean=mean, scale=scale, component=component,
                          explained_variance_ratio=evr, polarity=1)
    scores = np.array([velum_pc1_score(f, model) for f in frames])
    vel = np.array([tv_min_distance(f, vel_def) for f in frames])
    num = float(np.sum((scores - scores.mean()) * (vel - vel.mean())))
    if num < 0.0:
        model.polarity = -1
    return model


def velum_pc1_score(frame: ContourFrame, model: VelumPcaModel) -> float:
    v = (velum_vector(frame) - model.mean) / model.scale
    return float(model.polarity * (model.component @ v))


def velum_scores(frames, model: VelumPcaModel) -> np.ndarray:
    return np.array([velum_pc1_score(f, model) for f in frames])


def save_velum_pca(path, model: VelumPcaModel) -> None:
    payload = {
        "schema": "VelumPcaV1",
        "mean": model.mean.tolist(),
        "scale": model.scale.tolist(),
        "component": model.component.tolist(),
        "explained_variance_ratio": model.explained_variance_ratio,
        "polarity": model.polarity,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_velum_pca(path) -> VelumPcaModel:
    with open(path) as fh:
        raw = json.load(fh)
    if raw.get("schema") != "VelumPcaV1":
        raise StructuralError(f"not a velum PCA file: schema {raw.get('schema')!r}")
    return VelumPcaModel(
        mean=np.asarray(raw["mean"], dtype=np.float64),
        scale=np.asarray(raw["scale"], dtype=np.float64),
        component=np.asarray(raw["component"], dtype=np.float64),
        explained_variance_ratio=float(raw["explained_variance_ratio"]),
        polarity=int(raw["polarity"]),
    )


def compute_all_tvs(frames, defs=None, pca_model: VelumPcaModel | None = None,
                    anterior_sign: float | None = None) -> dict:
    """All nine tract-variable series (plus VEL_PCA when a model is given).

    ``frames`` must carry denormalized (mm) contours.
    """
    if defs is None:
        defs, default_sign = load_tv_defaults()
        if anterior_sign is None:
            anterior_sign = default_sign
    elif anterior_sign is None:
        anterior_sign = 1.0
    by_name = {d.name: d for d in defs}
    frames = list(frames)
    out: dict[str, TractVariableSeries] = {}
    for name in MIN_DISTANCE_TVS:
        d = by_name[name]
        out[name] = TractVariableSeries(
            name, np.array([tv_min_distance(f, d) for f in frames]))
    out["LP"] = TractVariableSeries(
        "LP", np.array([tv_lip_protrusion(f, anterior_sign) for f in frames]))
    out["TRCL"] = TractVariableSeries(
        "TRCL", np.array([tv_trcl(f, by_name["TRCD"]) for f in frames]))
    out["LH"] = TractVariableSeries(
        "LH", np.array([larynx_height(f, anterior_sign) for f in frames]))
    if pca_model is not None:
        out["VEL_PCA"] = TractVariableSeries(
            "VEL_PCA", velum_scores(frames, pca_model))
    return out

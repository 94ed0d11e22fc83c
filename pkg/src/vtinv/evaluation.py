"""Evaluation: RMSE statistics, Pearson correlations, velum sign accuracy,
outlier flagging, phone-level aggregation, and the two significance tests
(D'Agostino-Pearson normality, Wilcoxon signed-rank).

Both tests are implemented from their defining formulas so results do not
depend on an external stats package; the test suite cross-checks them
against independent oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .datamodel import PREDICTED_ARTICULATORS, PhoneSegment
from .errors import DegenerateDataError, StructuralError

# Reference values measured on the full-scale single-speaker RT-MRI corpus;
# recorded in reports for context only (that corpus is not redistributable,
# so these numbers are not reproducible from the synthetic data here).
REFERENCE_RESULTS = {
    "mean_rmse_mm": 1.48,
    "median_rmse_mm": 1.27,
    "tv_pearson_low": 0.84,
    "tv_pearson_high": 0.92,
    "pixel_mm": 1.62,
}


# -- contour error metrics ----------------------------------------------------


def frame_articulator_rmse(pred: np.ndarray, truth: np.ndarray,
                           coords: int = 100) -> np.ndarray:
    """Per-frame, per-articulator RMSE in mm.

    ``pred``/``truth`` are (T, k*coords) flattened contour matrices; each
    articulator's RMSE runs over its ``coords`` coordinates (100 for the
    standard 50-point contours).  Returns (T, k).
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise StructuralError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    if pred.ndim != 2 or pred.shape[1] % coords != 0:
        raise StructuralError(f"expected (T, k*{coords}) matrices, got {pred.shape}")
    resid = (pred - truth).reshape(pred.shape[0], -1, coords)
    return np.sqrt(np.mean(resid**2, axis=2))


@dataclass
class RmseSummary:
    per_articulator: dict  # key -> {rmse_mean, rmse_std, rmse_median}
    overall_mean: float
    overall_median: float
    frame_mean: np.ndarray  # (T,) mean over articulators per frame


def summarize_rmse(pred: np.ndarray, truth: np.ndarray) -> RmseSummary:
    rmse = frame_articulator_rmse(pred, truth)
    per_art = {}
    for j, art in enumerate(PREDICTED_ARTICULATORS):
        col = rmse[:, j]
        per_art[art.key] = {
            "rmse_mean": float(col.mean()),
            "rmse_std": float(col.std()),
            "rmse_median": float(np.median(col)),
        }
    frame_mean = rmse.mean(axis=1)
    return RmseSummary(
        per_articulator=per_art,
        overall_mean=float(frame_mean.mean()),
        overall_median=float(np.median(frame_mean)),
        frame_mean=frame_mean,
    )


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise StructuralError(f"pearson needs equal 1-D inputs, got {x.shape}, {y.shape}")
    if len(x) < 2:
        raise StructuralError("pearson needs n >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateDataError("correlation undefined: zero variance input")
    return float(np.sum(dx * dy) / (sx * sy))


def velum_sign_accuracy(pred_scores, truth_scores) -> float:
    """Open/closed agreement rate; score >= 0 counts as open (+1)."""
    p = np.asarray(pred_scores, dtype=np.float64)
    t = np.asarray(truth_scores, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise StructuralError("score series must be equal-length 1-D")
    if len(p) == 0:
        raise StructuralError("empty score series")
    sp = np.where(p >= 0.0, 1, -1)
    st = np.where(t >= 0.0, 1, -1)
    return float(np.mean(sp == st))


# -- outliers -----------------------------------------------------------------


@dataclass
class OutlierReport:
    rule: str  # "iqr_whisker" or "strict_q3"
    threshold: float
    indices: list  # frame indices above threshold


def flag_outliers(frame_rmse, rule: str = "iqr_whisker") -> OutlierReport:
    """Flag high-error frames.

    The default is the boxplot whisker rule Q3 + 1.5*(Q3-Q1); the
    "strict_q3" rule flags everything above Q3 (by construction ~25% of
    frames).  Quartiles use linear interpolation.
    """
    x = np.asarray(frame_rmse, dtype=np.float64)
    if x.ndim != 1 or len(x) < 4:
        raise StructuralError("outlier flagging needs a 1-D vector with n >= 4")
    q1 = float(np.quantile(x, 0.25))
    q3 = float(np.quantile(x, 0.75))
    if rule == "iqr_whisker":
        threshold = q3 + 1.5 * (q3 - q1)
    elif rule == "strict_q3":
        threshold = q3
    else:
        raise StructuralError(f"unknown outlier rule {rule!r}")
    idx = np.nonzero(x > threshold)[0]
    return OutlierReport(rule=rule, threshold=threshold, indices=idx.tolist())


# -- phone aggregation --------------------------------------------------------


@dataclass
class PhoneAggregation:
    values: np.ndarray  # one mean per phone segment that contained frames
    labels: list
    skipped_segments: int  # segments with zero frames
    segment_indices: list = field(default_factory=list)  # into the phones arg


def aggregate_by_phone(frame_scores, phones: list[PhoneSegment],
                       frame_rate: float = 50.0,
                       valid=None) -> PhoneAggregation:
    """Collapse per-frame scores to one mean per phone segment.

    Frame i belongs to the segment whose [start, end) interval contains
    its center time (i + 0.5) / frame_rate; frames outside every segment
    are dropped.  ``valid`` optionally masks frames without a score
    (e.g. trimmed tails); segments left with zero frames are skipped and
    counted.
    """
    x = np.asarray(frame_scores, dtype=np.float64)
    centers = (np.arange(len(x)) + 0.5) / frame_rate
    ok = np.ones(len(x), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if ok.shape != x.shape:
        raise StructuralError("valid mask length must match frame_scores")
    values = []
    labels = []
    indices = []
    skipped = 0
    for i, seg in enumerate(phones):
        mask = (centers >= seg.start_s) & (centers < seg.end_s) & ok
        if not mask.any():
            skipped += 1
            continue
        values.append(float(x[mask].mean()))
        labels.append(seg.label)
        indices.append(i)
    return PhoneAggregation(values=np.array(values), labels=labels,
                            skipped_segments=skipped, segment_indices=indices)


# -- D'Agostino-Pearson K^2 ---------------------------------------------------


def _skew_z(x: np.ndarray) -> float:
    n = len(x)
    m = x.mean()
    m2 = np.mean((x - m) ** 2)
    m3 = np.mean((x - m) ** 3)
    g1 = m3 / m2**1.5
    y = g1 * math.sqrt((n + 1) * (n + 3) / (6.0 * (n - 2)))
    beta2 = 3.0 * (n**2 + 27 * n - 70) * (n + 1) * (n + 3) / (
        (n - 2.0) * (n + 5) * (n + 7) * (n + 9))
    w2 = -1.0 + math.sqrt(2.0 * (beta2 - 1.0))
    delta = 1.0 / math.sqrt(0.5 * math.log(w2))
    alpha = math.sqrt(2.0 / (w2 - 1.0))
    y = y / alpha
    return delta * math.log(y + math.sqrt(y * y + 1.0))


def _kurt_z(x: np.ndarray) -> float:
    n = len(x)
    m = x.mean()
    m2 = np.mean((x - m) ** 2)
    m4 = np.mean((x - m) ** 4)
    b2 = m4 / m2**2
    e_b2 = 3.0 * (n - 1) / (n + 1)
    var_b2 = 24.0 * n * (n - 2) * (n - 3) / ((n + 1) ** 2 * (n + 3) * (n + 5))
    xs = (b2 - e_b2) / math.sqrt(var_b2)
    sqrt_b1 = (6.0 * (n * n - 5 * n + 2) / ((n + 7) * (n + 9))) * math.sqrt(
        6.0 * (n + 3) * (n + 5) / (n * (n - 2.0) * (n - 3)))
    a = 6.0 + (8.0 / sqrt_b1) * (2.0 / sqrt_b1 + math.sqrt(1.0 + 4.0 / sqrt_b1**2))
    t = (1.0 - 2.0 / a) / (1.0 + xs * math.sqrt(2.0 / (a - 4.0)))
    t = math.copysign(abs(t) ** (1.0 / 3.0), t)
    return ((1.0 - 2.0 / (9.0 * a)) - t) / math.sqrt(2.0 / (9.0 * a))


def dagostino_normality(x) -> tuple[float, float]:
    """Omnibus K^2 normality test; returns (statistic, p).

    K^2 = Z_skew^2 + Z_kurt^2 is chi-squared with 2 dof under normality,
    so p = exp(-K^2 / 2).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) < 20:
        raise StructuralError("normality test needs a 1-D sample with n >= 20")
    if np.ptp(x) == 0.0:
        raise DegenerateDataError("constant sample: normality test undefined")
    k2 = _skew_z(x) ** 2 + _kurt_z(x) ** 2
    return float(k2), float(math.exp(-0.5 * k2))


# -- Wilcoxon signed-rank -----------------------------------------------------


@dataclass
class WilcoxonResult:
    w: float
    p_value: float
    significant: bool
    n: int
    method: str  # "exact" or "normal"
    alpha: float = 0.05


def _average_ranks(v: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing the average of their positions."""
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_wilcoxon_p(ranks: np.ndarray, w_min: float) -> float:
    # Ranks may be half-integral under ties; doubling makes them integers,
    # so the null distribution of 2*W+ is a generating-function convolution.
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    top = 0
    for r in doubled:
        counts[r : top + r + 1] += counts[: top + 1].copy()
        top += r
    target = int(math.floor(2.0 * w_min + 1e-9))
    p_le = counts[: target + 1].sum() / 2.0 ** len(ranks)
    return min(1.0, 2.0 * p_le)


def wilcoxon_signed_rank(a, b, alpha: float = 0.05,
                         exact_threshold: int = 25) -> WilcoxonResult:
    """Paired two-sided Wilcoxon signed-rank test.

    Zero differences are dropped; |differences| are ranked with average
    ranks for ties; W = min(W+, W-).  Exact null enumeration for
    n <= exact_threshold, else normal approximation with tie and
    continuity corrections.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise StructuralError("wilcoxon needs equal-length 1-D samples")
    d = a - b
    d = d[d != 0.0]
    if len(d) == 0:
        raise DegenerateDataError("all paired differences are zero")
    n = len(d)
    if n < 5:
        raise StructuralError(f"too few nonzero differences for the test: {n}")
    ranks = _average_ranks(np.abs(d))
    w_pos = float(ranks[d > 0].sum())
    w_neg = float(ranks[d < 0].sum())
    w = min(w_pos, w_neg)
    if n <= exact_threshold:
        p = _exact_wilcoxon_p(ranks, w)
        method = "exact"
    else:
        mu = n * (n + 1) / 4.0
        sigma2 = n * (n + 1) * (2 * n + 1) / 24.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        sigma2 -= float(np.sum(tie_counts**3 - tie_counts)) / 48.0
        if sigma2 <= 0.0:
            raise DegenerateDataError("zero variance in rank statistic")
        z = (w - mu + 0.5) / math.sqrt(sigma2)
        p = min(1.0, math.erfc(-z / math.sqrt(2.0)))  # 2 * Phi(z)
        method = "normal"
    p = float(p)
    return WilcoxonResult(w=w, p_value=p, significant=bool(p < alpha), n=n,
                          method=method, alpha=alpha)


# -- report assembly ----------------------------------------------------------


@dataclass
class EvalReport:
    per_articulator: dict
    overall_mean: float
    overall_median: float
    per_tv_pearson: dict
    vel_accuracy: float | None
    outliers: dict
    significance: list = field(default_factory=list)
    n_frames: int = 0
    reference: dict = field(default_factory=lambda: dict(REFERENCE_RESULTS))

    def to_dict(self) -> dict:
        return asdict(self)


def build_report(pred: np.ndarray, truth: np.ndarray,
                 tvs_pred: dict | None = None, tvs_truth: dict | None = None,
                 outlier_rule: str = "iqr_whisker") -> EvalReport:
    """Assemble the standard report from aligned (T, 800) mm matrices and
    optional tract-variable series dicts."""
    summary = summarize_rmse(pred, truth)
    per_tv = {}
    vel_acc = None
    if tvs_pred and tvs_truth:
        for name in sorted(set(tvs_pred) & set(tvs_truth)):
            try:
                per_tv[name] = pearson(tvs_pred[name].values, tvs_truth[name].values)
            except DegenerateDataError:
                per_tv[name] = None
        if "VEL_PCA" in tvs_pred and "VEL_PCA" in tvs_truth:
            vel_acc = velum_sign_accuracy(tvs_pred["VEL_PCA"].values,
                                          tvs_truth["VEL_PCA"].values)
    out = flag_outliers(summary.frame_mean, rule=outlier_rule)
    return EvalReport(
        per_articulator=summary.per_articulator,
        overall_mean=summary.overall_mean,
        overall_median=summary.overall_median,
        per_tv_pearson=per_tv,
        vel_accuracy=vel_acc,
        outliers=asdict(out),
        n_frames=pred.shape[0],
    )

"""Experiment orchestration: splits, silence removal, utterance and subset
construction, and the two experiment runners (feature-kind comparison and
dataset-size ablation).

Conventions fixed here:
  * Splits are drawn per acquisition: n_val = n_test = max(1, floor(n/10)),
    remainder to train.
  * An utterance is a maximal contiguous run of non-silence frames.
  * Feature and contour normalization statistics are pooled per recording
    session (over every acquisition of the session, regardless of split).
  * Predictions are denormalized with the test frames' own ground-truth
    normalization state; this is an evaluation-only convention, usable
    because evaluation always has the ground-truth contours in hand.
  * Tract variables on predictions use the ground-truth incisor landmarks
    (landmarks are static and never predicted).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from . import contour_prep, evaluation, features, fileio, network, tract_variables, training
from .datamodel import FRAME_RATE_HZ, LANDMARKS, ContourFrame, frames_to_matrix, unflatten_frame
from .errors import DegenerateDataError, StructuralError
from .evaluation import EvalReport
from .training import Sample, TrainConfig, Trainer

log = logging.getLogger(__name__)

DEFAULT_SILENCE_LABELS = ("sil", "sp", "")


# -- corpus manifest ----------------------------------------------------------


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    wav: str
    contours: str
    phones: str
    n_frames: int
    embeddings: str | None = None


@dataclass
class Corpus:
    root: Path
    session_id: str
    pixel_mm: float
    entries: list


def load_corpus(root) -> Corpus:
    root = Path(root)
    manifest = root / "corpus.json"
    try:
        doc = json.loads(manifest.read_text())
    except FileNotFoundError:
        raise StructuralError(f"no corpus manifest at {manifest}") from None
    except json.JSONDecodeError as e:
        raise StructuralError(f"{manifest}: invalid JSON: {e}") from None
    if doc.get("schema") != "CorpusV1":
        raise StructuralError(f"{manifest}: unknown schema {doc.get('schema')!r}")
    entries = [
        CorpusEntry(id=a["id"], wav=a["wav"], contours=a["contours"],
                    phones=a["phones"], n_frames=int(a["n_frames"]),
                    embeddings=a.get("embeddings"))
        for a in doc["acquisitions"]
    ]
    if not entries:
        raise StructuralError(f"{manifest}: empty corpus")
    return Corpus(root=root, session_id=doc["session_id"],
                  pixel_mm=float(doc["pixel_mm"]), entries=entries)


# -- splits -------------------------------------------------------------------


@dataclass
class SplitAssignment:
    seed: int
    train: list
    val: list
    test: list


def make_split(acq_ids, seed: int) -> SplitAssignment:
    """80/10/10 by acquisition: val and test get max(1, floor(n/10)) each."""
    ids = sorted(acq_ids)
    n = len(ids)
    if n < 3:
        raise StructuralError(f"need at least 3 acquisitions to split, got {n}")
    n_hold = max(1, n // 10)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    shuffled = [ids[i] for i in rng.permutation(n)]
    return SplitAssignment(
        seed=seed,
        test=sorted(shuffled[:n_hold]),
        val=sorted(shuffled[n_hold : 2 * n_hold]),
        train=sorted(shuffled[2 * n_hold :]),
    )


def save_split(path, split: SplitAssignment) -> None:
    Path(path).write_text(json.dumps(asdict(split), indent=2))


def load_split(path) -> SplitAssignment:
    doc = json.loads(Path(path).read_text())
    try:
        return SplitAssignment(seed=int(doc["seed"]), train=list(doc["train"]),
                               val=list(doc["val"]), test=list(doc["test"]))
    except KeyError as e:
        raise StructuralError(f"{path}: missing split key {e}") from None


# -- silence removal and utterances -------------------------------------------


def non_silence_indices(n_frames: int, phones, silence_labels=DEFAULT_SILENCE_LABELS,
                        frame_rate: float = FRAME_RATE_HZ) -> np.ndarray:
    """Frame indices whose center time lies in no silence-labeled segment."""
    centers = (np.arange(n_frames) + 0.5) / frame_rate
    silent = np.zeros(n_frames, dtype=bool)
    for seg in phones:
        if seg.label in silence_labels:
            silent |= (centers >= seg.start_s) & (centers < seg.end_s)
    return np.nonzero(~silent)[0]


@dataclass(frozen=True)
class Utterance:
    acq_id: str
    start: int  # first frame index
    stop: int   # exclusive

    @property
    def n_frames(self) -> int:
        return self.stop - self.start

    @property
    def duration_s(self) -> float:
        return self.n_frames / FRAME_RATE_HZ


def contiguous_runs(indices: np.ndarray):
    """Maximal [start, stop) runs of consecutive integers."""
    runs = []
    if len(indices) == 0:
        return runs
    start = prev = int(indices[0])
    for i in indices[1:]:
        i = int(i)
        if i != prev + 1:
            runs.append((start, prev + 1))
            start = i
        prev = i
    runs.append((start, prev + 1))
    return runs


def build_utterances(acq_id: str, n_frames: int, phones,
                     silence_labels=DEFAULT_SILENCE_LABELS) -> list:
    kept = non_silence_indices(n_frames, phones, silence_labels)
    return [Utterance(acq_id, a, b) for a, b in contiguous_runs(kept)]


def subset_by_duration(utterances: list, target_seconds: float | None,
                       seed: int) -> list:
    """Seed-shuffled prefix of utterances reaching the target duration.

    The utterance that first crosses the target is included, so subsets
    for increasing targets under the same seed are nested.  ``None``
    means the full set.
    """
    canonical = sorted(utterances, key=lambda u: (u.acq_id, u.start))
    if target_seconds is None:
        return canonical
    total = sum(u.duration_s for u in canonical)
    if target_seconds > total:
        raise StructuralError(
            f"requested {target_seconds:.1f}s but only {total:.1f}s available")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    order = rng.permutation(len(canonical))
    out = []
    acc = 0.0
    for i in order:
        out.append(canonical[i])
        acc += canonical[i].duration_s
        if acc >= target_seconds:
            break
    return sorted(out, key=lambda u: (u.acq_id, u.start))


# -- corpus preparation -------------------------------------------------------


@dataclass
class PreparedAcq:
    id: str
    n_frames: int              # common feature/contour length after trimming
    feat: np.ndarray           # (n, F) session-normalized features
    target_norm: np.ndarray    # (n, 800) normalized contours
    target_mm: np.ndarray      # (n, 800) ground truth in mm
    state: contour_prep.ContourNormState
    truth_frames: list         # [ContourFrame] mm, with landmarks
    phones: list
    utterances: list


@dataclass
class PreparedCorpus:
    session_id: str
    kind: str
    feat_dim: int
    pixel_mm: float
    acqs: dict  # id -> PreparedAcq
    feat_stats: features.SessionStats
    contour_std: np.ndarray


def _raw_features(corpus: Corpus, entry: CorpusEntry, kind: str) -> np.ndarray:
    if kind == "embeddings":
        if entry.embeddings is None:
            raise StructuralError(f"acquisition {entry.id} has no embeddings file")
        mat, rate = fileio.read_feature_file(corpus.root / entry.embeddings)
        if abs(rate - FRAME_RATE_HZ) > 1e-6:
            raise StructuralError(
                f"{entry.embeddings}: embedding rate {rate} Hz, expected {FRAME_RATE_HZ}")
        return mat
    audio = fileio.read_wav_mono16k(corpus.root / entry.wav)
    return features.extract_features(audio, kind)


def prepare_corpus(corpus: Corpus, kind: str,
                   silence_labels=DEFAULT_SILENCE_LABELS) -> PreparedCorpus:
    """Load every acquisition, extract features, and normalize everything
    with session-pooled statistics."""
    raw_feats = {}
    raw_targets = {}
    truth_frames = {}
    phones = {}
    for entry in corpus.entries:
        acq = fileio.read_contours(corpus.root / entry.contours)
        feat = _raw_features(corpus, entry, kind)
        n = min(len(acq.frames), feat.shape[0])
        if n < 1:
            raise StructuralError(f"acquisition {entry.id}: no usable frames")
        raw_feats[entry.id] = feat[:n]
        truth_frames[entry.id] = acq.frames[:n]
        raw_targets[entry.id] = frames_to_matrix(acq.frames[:n])
        phones[entry.id] = fileio.read_phone_labels(corpus.root / entry.phones)

    order = sorted(raw_feats)
    feat_stats = features.fit_session_stats([raw_feats[a] for a in order],
                                            corpus.session_id)
    contour_std = contour_prep.fit_session_std([raw_targets[a] for a in order])

    acqs = {}
    for entry in corpus.entries:
        a = entry.id
        y, state = contour_prep.normalize_contours(
            raw_targets[a], session_id=corpus.session_id, session_std=contour_std)
        acqs[a] = PreparedAcq(
            id=a,
            n_frames=raw_targets[a].shape[0],
            feat=features.apply_norm(raw_feats[a], feat_stats),
            target_norm=y,
            target_mm=raw_targets[a],
            state=state,
            truth_frames=truth_frames[a],
            phones=phones[a],
            utterances=build_utterances(a, raw_targets[a].shape[0], phones[a],
                                        silence_labels),
        )
    feat_dim = acqs[order[0]].feat.shape[1]
    return PreparedCorpus(session_id=corpus.session_id, kind=kind,
                          feat_dim=feat_dim, pixel_mm=corpus.pixel_mm,
                          acqs=acqs, feat_stats=feat_stats,
                          contour_std=contour_std)


def utterances_of(prepared: PreparedCorpus, acq_ids) -> list:
    out = []
    for a in sorted(acq_ids):
        if a not in prepared.acqs:
            raise StructuralError(f"split references unknown acquisition {a!r}")
        out.extend(prepared.acqs[a].utterances)
    return out


def samples_from(prepared: PreparedCorpus, utterances: list) -> list:
    out = []
    for u in sorted(utterances, key=lambda u: (u.acq_id, u.start)):
        acq = prepared.acqs[u.acq_id]
        out.append(Sample(id=f"{u.acq_id}:{u.start}-{u.stop}",
                          x=acq.feat[u.start : u.stop],
                          y=acq.target_norm[u.start : u.stop]))
    return out


def constant_mean_baseline(prepared: PreparedCorpus, train_utterances: list) -> np.ndarray:
    """Mean training contour in mm: the no-information reference predictor."""
    rows = [prepared.acqs[u.acq_id].target_mm[u.start : u.stop]
            for u in train_utterances]
    return np.concatenate(rows, axis=0).mean(axis=0)


def fit_corpus_velum_pca(prepared: PreparedCorpus) -> tract_variables.VelumPcaModel:
    """PCA over every truth frame of the corpus, silences included."""
    all_frames = []
    for a in sorted(prepared.acqs):
        all_frames.extend(prepared.acqs[a].truth_frames)
    return tract_variables.fit_velum_pca(all_frames)


# -- evaluation of one trained condition --------------------------------------


def merge_landmark_frames(pred_mm: np.ndarray, truth_frames: list) -> list:
    """Rebuild full ContourFrames from predicted vectors, reusing the
    ground-truth landmark contours (never predicted)."""
    out = []
    for row, truth in zip(pred_mm, truth_frames):
        f = unflatten_frame(row, frame_index=truth.frame_index)
        merged = dict(f.contours)
        for lm in LANDMARKS:
            if lm in truth.contours:
                merged[lm] = truth.contours[lm]
        out.append(ContourFrame(frame_index=truth.frame_index, contours=merged))
    return out


@dataclass
class ConditionEval:
    name: str
    report: EvalReport
    baseline_overall_mean: float
    baseline_overall_median: float
    phone_scores: dict   # score name -> {(acq_id, seg_idx): value}
    n_test_frames: int
    checkpoint_sha256: str | None = None
    train_seconds: float = 0.0
    n_train_utterances: int = 0
    history: list = field(default_factory=list)

    def summary(self) -> dict:
        d = self.report.to_dict()
        d["baseline_overall_mean"] = self.baseline_overall_mean
        d["baseline_overall_median"] = self.baseline_overall_median
        d["n_test_frames"] = self.n_test_frames
        d["checkpoint_sha256"] = self.checkpoint_sha256
        d["train_seconds"] = self.train_seconds
        d["n_train_utterances"] = self.n_train_utterances
        return d


def evaluate_model(prepared: PreparedCorpus, model, test_utterances: list,
                   pca_model=None, baseline_row: np.ndarray | None = None,
                   name: str = "", outlier_rule: str = "iqr_whisker",
                   silence_labels=DEFAULT_SILENCE_LABELS) -> ConditionEval:
    """Run inference on the test utterances and assemble the full report.

    Predictions are denormalized with the ground-truth normalization
    state of the test frames, then compared in mm.
    """
    if not test_utterances:
        raise StructuralError("no test utterances to evaluate")
    by_acq: dict[str, list] = {}
    for u in sorted(test_utterances, key=lambda u: (u.acq_id, u.start)):
        by_acq.setdefault(u.acq_id, []).append(u)

    pred_all, truth_all, frames_truth_all = [], [], []
    per_art_phone: dict[tuple, dict] = {}
    frame_mean_phone: dict[tuple, float] = {}

    for acq_id, utts in sorted(by_acq.items()):
        acq = prepared.acqs[acq_id]
        n = acq.n_frames
        valid = np.zeros(n, dtype=bool)
        rmse_full = np.full((n, len(evaluation.PREDICTED_ARTICULATORS)), np.nan)
        for u in utts:
            y = network.forward(model, acq.feat[u.start : u.stop])
            pred_mm = (y * acq.state.std
                       + acq.state.moving_means[u.start : u.stop])
            truth_mm = acq.target_mm[u.start : u.stop]
            pred_all.append(pred_mm)
            truth_all.append(truth_mm)
            frames_truth_all.extend(acq.truth_frames[u.start : u.stop])
            rmse_full[u.start : u.stop] = evaluation.frame_articulator_rmse(
                pred_mm, truth_mm)
            valid[u.start : u.stop] = True
        speech_phones = [p for p in acq.phones if p.label not in silence_labels]
        for j, art in enumerate(evaluation.PREDICTED_ARTICULATORS):
            agg = evaluation.aggregate_by_phone(
                np.nan_to_num(rmse_full[:, j]), speech_phones, valid=valid)
            for k, v in zip(agg.segment_indices, agg.values):
                per_art_phone.setdefault(art.key, {})[(acq_id, k)] = v
        mean_scores = np.zeros(n)
        mean_scores[valid] = rmse_full[valid].mean(axis=1)
        agg = evaluation.aggregate_by_phone(mean_scores, speech_phones, valid=valid)
        for k, v in zip(agg.segment_indices, agg.values):
            frame_mean_phone[(acq_id, k)] = v

    pred = np.concatenate(pred_all, axis=0)
    truth = np.concatenate(truth_all, axis=0)
    pred_frames = merge_landmark_frames(pred, frames_truth_all)

    tvs_truth = tract_variables.compute_all_tvs(frames_truth_all, pca_model=pca_model)
    tvs_pred = tract_variables.compute_all_tvs(pred_frames, pca_model=pca_model)
    report = evaluation.build_report(pred, truth, tvs_pred, tvs_truth,
                                     outlier_rule=outlier_rule)

    baseline_mean = float("nan")
    baseline_median = float("nan")
    if baseline_row is not None:
        base = evaluation.summarize_rmse(
            np.broadcast_to(baseline_row, truth.shape), truth)
        baseline_mean = base.overall_mean
        baseline_median = base.overall_median

    phone_scores = dict(per_art_phone)
    phone_scores["frame_mean"] = frame_mean_phone
    return ConditionEval(name=name, report=report,
                         baseline_overall_mean=baseline_mean,
                         baseline_overall_median=baseline_median,
                         phone_scores=phone_scores,
                         n_test_frames=pred.shape[0])


# -- significance between conditions ------------------------------------------


def paired_significance(a: ConditionEval, b: ConditionEval, alpha: float = 0.05) -> dict:
    """Per-articulator Wilcoxon on phone-aggregated RMSE scores.

    Degenerate comparisons (identical conditions) are flagged, not raised.
    """
    out = {}
    for key in sorted(set(a.phone_scores) & set(b.phone_scores)):
        pairs = sorted(set(a.phone_scores[key]) & set(b.phone_scores[key]))
        xa = np.array([a.phone_scores[key][k] for k in pairs])
        xb = np.array([b.phone_scores[key][k] for k in pairs])
        try:
            r = evaluation.wilcoxon_signed_rank(xa, xb, alpha=alpha)
            out[key] = {"w": r.w, "p_value": r.p_value, "significant": r.significant,
                        "n": r.n, "method": r.method}
        except DegenerateDataError as e:
            out[key] = {"degenerate": True, "reason": str(e), "n": len(pairs)}
        except StructuralError as e:
            out[key] = {"insufficient": True, "reason": str(e), "n": len(pairs)}
    return out


# -- experiment runners -------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    name: str
    kind: str
    target_seconds: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    corpus_dir: str
    out_dir: str
    seed: int = 0
    kinds: tuple = ("mfcc39", "lcc30")
    fractions: tuple = (0.25, 0.5, 1.0)
    ablation_kind: str = "lcc30"
    train: TrainConfig = field(default_factory=TrainConfig)
    silence_labels: tuple = DEFAULT_SILENCE_LABELS
    outlier_rule: str = "iqr_whisker"
    alpha: float = 0.05


def _run_conditions(cfg: ExperimentConfig, conditions: list) -> dict:
    corpus = load_corpus(cfg.corpus_dir)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = make_split([e.id for e in corpus.entries], cfg.seed)
    save_split(out_dir / "split.json", split)

    prepared_cache: dict[str, PreparedCorpus] = {}
    pca_cache: dict[str, tract_variables.VelumPcaModel] = {}
    evals: list[ConditionEval] = []
    for cond in conditions:
        if cond.kind not in prepared_cache:
            prepared_cache[cond.kind] = prepare_corpus(
                corpus, cond.kind, cfg.silence_labels)
            pca_cache[cond.kind] = fit_corpus_velum_pca(prepared_cache[cond.kind])
        prepared = prepared_cache[cond.kind]

        train_utts = subset_by_duration(
            utterances_of(prepared, split.train), cond.target_seconds, cfg.seed)
        val_utts = utterances_of(prepared, split.val)
        test_utts = utterances_of(prepared, split.test)
        train_cfg = replace(cfg.train, seed=cfg.seed)

        log.info("condition %s: %d train / %d val / %d test utterances",
                 cond.name, len(train_utts), len(val_utts), len(test_utts))
        model = training.build_model(prepared.feat_dim, train_cfg)
        trainer = Trainer(model, train_cfg)
        trainer.run(samples_from(prepared, train_utts),
                    samples_from(prepared, val_utts))

        cond_dir = out_dir / "conditions" / cond.name
        cond_dir.mkdir(parents=True, exist_ok=True)
        ckpt = cond_dir / "checkpoint.ckpt"
        trainer.save(ckpt)

        ev = evaluate_model(
            prepared, trainer.best_model(), test_utts,
            pca_model=pca_cache[cond.kind],
            baseline_row=constant_mean_baseline(prepared, train_utts),
            name=cond.name, outlier_rule=cfg.outlier_rule,
            silence_labels=cfg.silence_labels)
        ev.checkpoint_sha256 = training.checkpoint_sha256(ckpt)
        ev.train_seconds = sum(u.duration_s for u in train_utts)
        ev.n_train_utterances = len(train_utts)
        ev.history = trainer.history
        (cond_dir / "report.json").write_text(json.dumps(
            {"report": ev.summary(), "history": trainer.history}, indent=2))
        evals.append(ev)
    return {"split": asdict(split), "evals": evals, "out_dir": out_dir}


def _comparison_table(evals: list) -> dict:
    return {
        ev.name: {
            "overall_mean": ev.report.overall_mean,
            "overall_median": ev.report.overall_median,
            "baseline_overall_mean": ev.baseline_overall_mean,
            "per_articulator": ev.report.per_articulator,
            "per_tv_pearson": ev.report.per_tv_pearson,
            "vel_accuracy": ev.report.vel_accuracy,
            "train_seconds": ev.train_seconds,
            "checkpoint_sha256": ev.checkpoint_sha256,
            "n_test_frames": ev.n_test_frames,
        }
        for ev in evals
    }


def _write_table_csv(path, table: dict) -> None:
    names = list(table)
    art_keys = sorted(next(iter(table.values()))["per_articulator"]) if table else []
    lines = ["condition,overall_mean,overall_median,baseline_mean,"
             + ",".join(art_keys)]
    for name in names:
        row = table[name]
        arts = ",".join(f"{row['per_articulator'][k]['rmse_mean']:.6f}" for k in art_keys)
        lines.append(f"{name},{row['overall_mean']:.6f},{row['overall_median']:.6f},"
                     f"{row['baseline_overall_mean']:.6f},{arts}")
    Path(path).write_text("\n".join(lines) + "\n")


def run_embedding_experiment(cfg: ExperimentConfig) -> dict:
    """Train one model per feature kind on the identical split and compare."""
    conditions = [Condition(name=k, kind=k) for k in cfg.kinds]
    run = _run_conditions(cfg, conditions)
    evals = run["evals"]
    significance = {}
    for i in range(len(evals)):
        for j in range(i + 1, len(evals)):
            significance[f"{evals[i].name}_vs_{evals[j].name}"] = paired_significance(
                evals[i], evals[j], cfg.alpha)
    result = {
        "experiment": "embedding_comparison",
        "seed": cfg.seed,
        "split": run["split"],
        "conditions": _comparison_table(evals),
        "significance": significance,
    }
    out_dir = run["out_dir"]
    (out_dir / "comparison.json").write_text(json.dumps(result, indent=2))
    _write_table_csv(out_dir / "comparison.csv", result["conditions"])
    return result


def run_ablation_experiment(cfg: ExperimentConfig) -> dict:
    """Train on nested subsets of the training split and compare sizes."""
    corpus = load_corpus(cfg.corpus_dir)
    split = make_split([e.id for e in corpus.entries], cfg.seed)
    prepared = prepare_corpus(corpus, cfg.ablation_kind, cfg.silence_labels)
    total = sum(u.duration_s for u in utterances_of(prepared, split.train))

    conditions = []
    for frac in cfg.fractions:
        if not 0.0 < frac <= 1.0:
            raise StructuralError(f"ablation fraction {frac} outside (0, 1]")
        target = None if frac == 1.0 else frac * total
        conditions.append(Condition(name=f"frac{int(round(100 * frac)):03d}",
                                    kind=cfg.ablation_kind, target_seconds=target))
    run = _run_conditions(cfg, conditions)
    evals = run["evals"]
    table = _comparison_table(evals)
    ordered = [ev.name for ev in sorted(evals, key=lambda e: e.train_seconds)]
    deltas = [
        {"from": a, "to": b,
         "delta_overall_mean": table[b]["overall_mean"] - table[a]["overall_mean"]}
        for a, b in zip(ordered, ordered[1:])
    ]
    result = {
        "experiment": "size_ablation",
        "seed": cfg.seed,
        "split": run["split"],
        "kind": cfg.ablation_kind,
        "total_train_seconds": total,
        "conditions": table,
        "order_by_size": ordered,
        "deltas": deltas,
    }
    out_dir = run["out_dir"]
    (out_dir / "comparison.json").write_text(json.dumps(result, indent=2))
    _write_table_csv(out_dir / "comparison.csv", result["conditions"])
    return result

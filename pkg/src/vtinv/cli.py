"""Command-line entry point (`vt`).

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure (divergence, degenerate statistics).  Errors are printed to
stderr as single-line JSON.  Every subcommand writes a resolved-config
copy next to its outputs and is byte-idempotent given identical inputs
and seed (logs may differ; outputs contain no timestamps).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import contour_prep, evaluation, experiment, features, fileio, network, registration
from . import synth, tract_variables, training
from .datamodel import FRAME_RATE_HZ, Acquisition, frames_to_matrix, unflatten_frame
from .errors import (DegenerateDataError, DivergenceError, FormatError,
                     StructuralError, UsageError, VtError)
from .training import TrainConfig, Trainer

log = logging.getLogger("vtinv")


# -- plumbing -----------------------------------------------------------------


def _write_resolved_config(target: Path, payload: dict) -> None:
    """Next to a directory output: <dir>/resolved_config.json; next to a
    file output: <file>.config.json."""
    if target.suffix:
        path = target.parent / (target.name + ".config.json")
        path.parent.mkdir(parents=True, exist_ok=True)
    else:
        target.mkdir(parents=True, exist_ok=True)
        path = target / "resolved_config.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def _resolved(args, **extra) -> dict:
    base = {"command": args.command, "seed": args.seed, "threads": args.threads,
            "log_level": args.log_level}
    base.update(extra)
    return base


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e}") from None


def _check_keys(doc: dict, allowed, where: str) -> None:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise UsageError(f"{where}: unknown keys {unknown}; allowed: {sorted(allowed)}")


def _train_config(doc: dict, seed: int) -> TrainConfig:
    _check_keys(doc, TrainConfig.__dataclass_fields__, "train config")
    doc = dict(doc)
    doc.setdefault("seed", seed)
    return TrainConfig(**doc)


def _sorted_files(directory, suffix: str) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"not a directory: {directory}")
    out = sorted(f for f in d.glob(f"*{suffix}")
                 if not f.name.endswith(".config.json")
                 and f.name != "resolved_config.json")
    if not out:
        raise StructuralError(f"no {suffix} files in {directory}")
    return out


# -- subcommands ---------------------------------------------------------------


def cmd_synth_corpus(args) -> int:
    cfg = synth.SynthConfig(seed=args.seed, n_acquisitions=args.n_acq,
                            frames_per_acq=args.frames, n_latents=args.latents,
                            with_embeddings=not args.no_embeddings)
    out = Path(args.out)
    manifest = synth.generate_corpus(cfg, out)
    _write_resolved_config(out, _resolved(args, synth=asdict(cfg)))
    log.info("wrote corpus manifest %s", manifest)
    return 0


def cmd_extract(args) -> int:
    if args.kind not in ("mfcc39", "lcc30"):
        raise UsageError(f"--kind must be mfcc39 or lcc30, got {args.kind!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for wav in _sorted_files(args.in_dir, ".wav"):
        audio = fileio.read_wav_mono16k(wav)
        feat = features.extract_features(audio, args.kind)
        fileio.write_feature_file(out / (wav.stem + ".vtaf"), feat, FRAME_RATE_HZ)
    _write_resolved_config(out, _resolved(args, kind=args.kind, in_dir=str(args.in_dir)))
    return 0


def cmd_normalize(args) -> int:
    files = _sorted_files(args.in_dir, ".vtaf")
    mats = []
    rates = []
    for f in files:
        m, r = fileio.read_feature_file(f)
        mats.append(m)
        rates.append(r)
    stats = features.fit_session_stats(mats, args.session)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f, m, r in zip(files, mats, rates):
        fileio.write_feature_file(out / f.name, features.apply_norm(m, stats), r)
    Path(args.stats).parent.mkdir(parents=True, exist_ok=True)
    Path(args.stats).write_text(json.dumps({
        "schema": "SessionStatsV1", "session_id": stats.session_id,
        "mean": stats.mean.tolist(), "std": stats.std.tolist()}))
    _write_resolved_config(out, _resolved(args, in_dir=str(args.in_dir),
                                          session=args.session, stats=str(args.stats)))
    return 0


def cmd_prep_contours(args) -> int:
    files = _sorted_files(args.in_dir, ".json")
    acqs = [fileio.read_contours(f) for f in files]
    mats = [frames_to_matrix(a.frames) for a in acqs]
    std = contour_prep.fit_session_std(mats)
    out = Path(args.out)
    state_dir = Path(args.state)
    out.mkdir(parents=True, exist_ok=True)
    state_dir.mkdir(parents=True, exist_ok=True)
    fileio.write_feature_file(state_dir / "session.std.vtaf",
                              std[None, :], FRAME_RATE_HZ)
    for f, acq, mat in zip(files, acqs, mats):
        y, state = contour_prep.normalize_contours(
            mat, session_id=acq.session_id, session_std=std)
        fileio.write_feature_file(out / (f.stem + ".vtaf"), y, FRAME_RATE_HZ)
        fileio.write_feature_file(state_dir / (f.stem + ".means.vtaf"),
                                  state.moving_means, FRAME_RATE_HZ)
    _write_resolved_config(out, _resolved(args, in_dir=str(args.in_dir),
                                          state=str(args.state)))
    return 0


def cmd_register(args) -> int:
    ref = fileio.read_pgm(args.ref)
    mask = fileio.read_pgm(args.mask) > 0.5
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {}
    for f in _sorted_files(args.in_dir, ".pgm"):
        t, score = registration.register(fileio.read_pgm(f), ref, mask)
        aligned = registration.apply_rigid(fileio.read_pgm(f), t)
        fileio.write_pgm(out / f.name, np.clip(aligned, 0.0, 1.0))
        report[f.name] = {"dx": t.dx, "dy": t.dy, "theta_deg": t.theta_deg,
                          "score": score}
    Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True))
    _write_resolved_config(out, _resolved(args, ref=str(args.ref), mask=str(args.mask),
                                          in_dir=str(args.in_dir),
                                          report=str(args.report)))
    return 0


def _paired_samples(feat_dir, target_dir, ids) -> list:
    samples = []
    for stem in sorted(ids):
        fpath = Path(feat_dir) / f"{stem}.vtaf"
        cpath = Path(target_dir) / f"{stem}.vtaf"
        if not fpath.exists() or not cpath.exists():
            raise StructuralError(f"missing feature or contour file for id {stem!r}")
        x, _ = fileio.read_feature_file(fpath)
        y, _ = fileio.read_feature_file(cpath)
        n = min(x.shape[0], y.shape[0])
        if n < 1:
            raise StructuralError(f"{stem}: no overlapping frames")
        samples.append(training.Sample(id=stem, x=x[:n], y=y[:n]))
    return samples


def cmd_train(args) -> int:
    split = experiment.load_split(args.split)
    cfg = _train_config(_load_json(args.config) if args.config else {}, args.seed)
    train_set = _paired_samples(args.features, args.contours, split.train)
    val_set = _paired_samples(args.features, args.contours, split.val)
    input_dim = train_set[0].x.shape[1]
    output_dim = train_set[0].y.shape[1]
    model = training.build_model(input_dim, cfg, output_dim=output_dim)
    trainer = Trainer(model, cfg)
    trainer.run(train_set, val_set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer.save(out / "checkpoint.ckpt")
    (out / "history.json").write_text(json.dumps({
        "history": trainer.history, "best_epoch": trainer.best_epoch,
        "best_val_loss": trainer.best_val_loss,
        "stopped_early": trainer.stopped_early,
        "checkpoint_sha256": training.checkpoint_sha256(out / "checkpoint.ckpt")},
        indent=2))
    _write_resolved_config(out, _resolved(args, train=asdict(cfg),
                                          split=str(args.split),
                                          features=str(args.features),
                                          contours=str(args.contours)))
    return 0


def cmd_infer(args) -> int:
    model = training.load_model(args.ckpt)
    x, _rate = fileio.read_feature_file(args.features)
    y = network.forward(model, x)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.state_means:
        if not args.state_std:
            raise UsageError("--state-means requires --state-std")
        means, _ = fileio.read_feature_file(args.state_means)
        std, _ = fileio.read_feature_file(args.state_std)
        if std.shape[0] != 1:
            raise StructuralError(f"std file must have one row, got {std.shape}")
        n = min(y.shape[0], means.shape[0])
        state = contour_prep.ContourNormState(
            session_id="", moving_means=means[:n], std=std[0])
        mm = contour_prep.denormalize_contours(y[:n], state)
        frames = [unflatten_frame(row, i) for i, row in enumerate(mm)]
        acq = Acquisition(id=args.acq_id or Path(args.features).stem,
                          session_id="", frames=frames)
        fileio.write_contours(out, acq, args.pixel_mm)
    else:
        fileio.write_feature_file(out, y, FRAME_RATE_HZ)
    _write_resolved_config(out, _resolved(args, ckpt=str(args.ckpt),
                                          features=str(args.features),
                                          denormalized=bool(args.state_means)))
    return 0


def cmd_eval(args) -> int:
    pred_files = _sorted_files(args.pred, ".json")
    truth_dir = Path(args.truth)
    phones_dir = Path(args.phones)

    pred_rows, truth_rows = [], []
    truth_frames_all, pred_frames_all = [], []
    boxplot_rows = []
    all_truth_frames = []
    per_acq = []
    for pf in pred_files:
        stem = pf.stem
        tf = truth_dir / f"{stem}.json"
        lf = phones_dir / f"{stem}.tsv"
        if not tf.exists():
            raise StructuralError(f"no truth contours for {stem!r}")
        if not lf.exists():
            raise StructuralError(f"no phone labels for {stem!r}")
        pred_acq = fileio.read_contours(pf)
        truth_acq = fileio.read_contours(tf)
        phones = fileio.read_phone_labels(lf)
        all_truth_frames.extend(truth_acq.frames)
        t_by_idx = {f.frame_index: f for f in truth_acq.frames}
        common = [f for f in pred_acq.frames if f.frame_index in t_by_idx]
        if not common:
            raise StructuralError(f"{stem}: no common frames between pred and truth")
        n_frames = max(t_by_idx) + 1
        keep = set(experiment.non_silence_indices(n_frames, phones).tolist())
        common = [f for f in common if f.frame_index in keep]
        if not common:
            continue
        truth_sel = [t_by_idx[f.frame_index] for f in common]
        # landmarks are never predicted; tract variables need them from truth
        common = experiment.merge_landmark_frames(frames_to_matrix(common), truth_sel)
        pred_frames_all.extend(common)
        truth_frames_all.extend(truth_sel)
        pred_rows.append(frames_to_matrix(common))
        truth_rows.append(frames_to_matrix(truth_sel))
        per_acq.append((stem, [f.frame_index for f in common]))

    if not pred_rows:
        raise StructuralError("no evaluable frames (everything silent or missing)")
    pred = np.concatenate(pred_rows, axis=0)
    truth = np.concatenate(truth_rows, axis=0)
    pca = tract_variables.fit_velum_pca(all_truth_frames) if len(all_truth_frames) >= 50 else None
    tvs_pred = tract_variables.compute_all_tvs(pred_frames_all, pca_model=pca)
    tvs_truth = tract_variables.compute_all_tvs(truth_frames_all, pca_model=pca)
    report = evaluation.build_report(pred, truth, tvs_pred, tvs_truth,
                                     outlier_rule=args.outlier_rule)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2))
    if args.emit_boxplot:
        frame_mean = evaluation.summarize_rmse(pred, truth).frame_mean
        i = 0
        boxplot_rows.append("acq_id,frame_index,mean_rmse_mm")
        for stem, idxs in per_acq:
            for fi in idxs:
                boxplot_rows.append(f"{stem},{fi},{frame_mean[i]:.9f}")
                i += 1
        Path(args.emit_boxplot).write_text("\n".join(boxplot_rows) + "\n")
    _write_resolved_config(out, _resolved(args, pred=str(args.pred),
                                          truth=str(args.truth),
                                          phones=str(args.phones),
                                          outlier_rule=args.outlier_rule))
    return 0


def cmd_tract_vars(args) -> int:
    acq = fileio.read_contours(args.contours)
    if args.defs:
        defs, anterior = tract_variables.parse_tv_defs(_load_json(args.defs))
    else:
        defs, anterior = tract_variables.load_tv_defaults()
    pca = None
    if args.pca:
        pca = tract_variables.load_velum_pca(args.pca)
    elif args.fit_pca:
        pca = tract_variables.fit_velum_pca(acq.frames)
        tract_variables.save_velum_pca(args.fit_pca, pca)
    tvs = tract_variables.compute_all_tvs(acq.frames, defs, pca, anterior)
    lines = ["frame,name,value"]
    for i, frame in enumerate(acq.frames):
        for name in sorted(tvs):
            lines.append(f"{frame.frame_index},{name},{tvs[name].values[i]:.9f}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    _write_resolved_config(out, _resolved(args, contours=str(args.contours),
                                          defs=str(args.defs) if args.defs else None,
                                          pca=str(args.pca) if args.pca else None))
    return 0


_EXPERIMENT_KEYS = ("corpus_dir", "out_dir", "seed", "kinds", "fractions",
                    "ablation_kind", "train", "silence_labels", "outlier_rule",
                    "alpha")


def _experiment_config(path, seed: int) -> experiment.ExperimentConfig:
    doc = _load_json(path)
    _check_keys(doc, _EXPERIMENT_KEYS, str(path))
    for req in ("corpus_dir", "out_dir"):
        if req not in doc:
            raise UsageError(f"{path}: missing required key {req!r}")
    kw = dict(doc)
    kw["seed"] = int(doc.get("seed", seed))
    kw["train"] = _train_config(doc.get("train", {}), kw["seed"])
    for tup_key in ("kinds", "fractions", "silence_labels"):
        if tup_key in kw:
            kw[tup_key] = tuple(kw[tup_key])
    return experiment.ExperimentConfig(**kw)


def cmd_ablate(args) -> int:
    cfg = _experiment_config(args.config, args.seed)
    result = experiment.run_ablation_experiment(cfg)
    _write_resolved_config(Path(cfg.out_dir), _resolved(args, **json.loads(
        json.dumps({"experiment": asdict(cfg)}, default=str))))
    log.info("ablation finished: %s", result["order_by_size"])
    return 0


def cmd_compare_embeddings(args) -> int:
    cfg = _experiment_config(args.config, args.seed)
    result = experiment.run_embedding_experiment(cfg)
    _write_resolved_config(Path(cfg.out_dir), _resolved(args, **json.loads(
        json.dumps({"experiment": asdict(cfg)}, default=str))))
    log.info("compared %s", sorted(result["conditions"]))
    return 0


def cmd_stats(args) -> int:
    doc = _load_json(args.pairs)
    _check_keys(doc, ("a", "b"), str(args.pairs))
    if "a" not in doc or "b" not in doc:
        raise UsageError(f"{args.pairs}: needs keys 'a' and 'b'")
    a = np.asarray(doc["a"], dtype=np.float64)
    b = np.asarray(doc["b"], dtype=np.float64)
    result = {}
    d = a - b if a.shape == b.shape else None
    for name, x in (("a", a), ("b", b)) + ((("diff", d),) if d is not None else ()):
        if x is not None and x.ndim == 1 and len(x) >= 20 and np.ptp(x) > 0:
            k2, p = evaluation.dagostino_normality(x)
            result[f"dagostino_{name}"] = {"k2": k2, "p_value": p}
        else:
            result[f"dagostino_{name}"] = {"skipped": "needs 1-D sample, n >= 20, non-constant"}
    w = evaluation.wilcoxon_signed_rank(a, b, alpha=args.alpha)
    result["wilcoxon"] = {"w": w.w, "p_value": w.p_value, "significant": w.significant,
                          "n": w.n, "method": w.method, "alpha": w.alpha}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result, indent=2))
    _write_resolved_config(out, _resolved(args, pairs=str(args.pairs), alpha=args.alpha))
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vt",
        description="Acoustic-to-articulatory inversion toolkit for RT-MRI "
                    "vocal tract data.")
    p.add_argument("--seed", type=int, default=0, help="global random seed")
    p.add_argument("--threads", type=int, default=0,
                   help="worker bound (0 = all cores); results are "
                        "deterministic regardless")
    p.add_argument("--log-level", default="warning",
                   choices=("debug", "info", "warning", "error"))
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-corpus", help="generate a synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n-acq", type=int, default=20)
    s.add_argument("--frames", type=int, default=400)
    s.add_argument("--latents", type=int, default=4)
    s.add_argument("--no-embeddings", action="store_true")
    s.set_defaults(func=cmd_synth_corpus)

    s = sub.add_parser("extract", help="extract cepstral features from WAVs")
    s.add_argument("--kind", required=True)
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("normalize", help="per-session z-normalization of features")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--stats", required=True)
    s.add_argument("--session", default="session0")
    s.set_defaults(func=cmd_normalize)

    s = sub.add_parser("prep-contours", help="normalize contour trajectories")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--state", required=True)
    s.set_defaults(func=cmd_prep_contours)

    s = sub.add_parser("register", help="rigid registration to a reference image")
    s.add_argument("--ref", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_register)

    s = sub.add_parser("train", help="train the Bi-LSTM regressor")
    s.add_argument("--features", required=True)
    s.add_argument("--contours", required=True)
    s.add_argument("--split", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="run inference on a feature file")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--state-means", default=None)
    s.add_argument("--state-std", default=None)
    s.add_argument("--pixel-mm", type=float, default=1.62)
    s.add_argument("--acq-id", default=None)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="evaluate predicted contours against truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--phones", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--emit-boxplot", default=None)
    s.add_argument("--outlier-rule", default="iqr_whisker",
                   choices=("iqr_whisker", "strict_q3"))
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("tract-vars", help="compute tract variables from contours")
    s.add_argument("--contours", required=True)
    s.add_argument("--defs", default=None)
    s.add_argument("--pca", default=None)
    s.add_argument("--fit-pca", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tract_vars)

    s = sub.add_parser("ablate", help="dataset-size ablation experiment")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("compare-embeddings", help="feature-kind comparison experiment")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_compare_embeddings)

    s = sub.add_parser("stats", help="significance tests on paired samples")
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alpha", type=float, default=0.05)
    s.set_defaults(func=cmd_stats)

    return p


def _emit_error(exc: Exception) -> None:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        _emit_error(e)
        return 1
    except (DegenerateDataError, DivergenceError) as e:
        _emit_error(e)
        return 3
    except (FormatError, StructuralError) as e:
        _emit_error(e)
        return 2
    except VtError as e:
        _emit_error(e)
        return 2
    except OSError as e:
        _emit_error(e)
        return 2


if __name__ == "__main__":
    sys.exit(main())

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_frame
from vtinv import experiment, network
from vtinv.datamodel import LANDMARKS, PhoneSegment, frames_to_matrix
from vtinv.errors import StructuralError
from vtinv.experiment import (Corpus, CorpusEntry, Utterance,
                              build_utterances, constant_mean_baseline,
                              contiguous_runs, evaluate_model,
                              fit_corpus_velum_pca, load_corpus, load_split,
                              make_split, merge_landmark_frames,
                              non_silence_indices, paired_significance,
                              prepare_corpus, samples_from, save_split,
                              subset_by_duration, utterances_of)
from vtinv.training import TrainConfig, Trainer, build_model


# -- splits --------------------------------------------------------------------


def test_split_153_gives_123_15_15():
    s = make_split([f"a{i:03d}" for i in range(153)], seed=0)
    assert (len(s.train), len(s.val), len(s.test)) == (123, 15, 15)


def test_split_10_gives_8_1_1():
    s = make_split([f"a{i}" for i in range(10)], seed=1)
    assert (len(s.train), len(s.val), len(s.test)) == (8, 1, 1)


def test_split_3_gives_1_1_1():
    s = make_split(["x", "y", "z"], seed=2)
    assert (len(s.train), len(s.val), len(s.test)) == (1, 1, 1)


def test_split_too_small():
    with pytest.raises(StructuralError):
        make_split(["a", "b"], seed=0)


def test_split_partitions_ids():
    ids = [f"a{i}" for i in range(37)]
    s = make_split(ids, seed=5)
    combined = s.train + s.val + s.test
    assert sorted(combined) == sorted(ids)
    assert len(set(combined)) == len(ids)
    assert s.train == sorted(s.train)
    assert s.val == sorted(s.val) and s.test == sorted(s.test)


def test_split_seed_determinism():
    ids = [f"a{i}" for i in range(20)]
    assert make_split(ids, 7) == make_split(ids, 7)
    assert make_split(ids, 7) != make_split(ids, 8)
    # order of the input iterable must not matter
    assert make_split(list(reversed(ids)), 7) == make_split(ids, 7)


def test_split_save_load_round_trip(tmp_path):
    s = make_split([f"a{i}" for i in range(12)], seed=3)
    p = tmp_path / "split.json"
    save_split(p, s)
    assert load_split(p) == s


def test_load_split_missing_key(tmp_path):
    p = tmp_path / "split.json"
    p.write_text(json.dumps({"seed": 0, "train": [], "val": []}))
    with pytest.raises(StructuralError, match="test"):
        load_split(p)


# -- silence removal ------------------------------------------------------------


def test_non_silence_center_rule():
    # frame centers at 10 ms, 30 ms, 50 ms, ...; sil covers [0, 50 ms)
    phones = [PhoneSegment("sil", 0.0, 0.05), PhoneSegment("a", 0.05, 0.2)]
    kept = non_silence_indices(8, phones)
    np.testing.assert_array_equal(kept, [2, 3, 4, 5, 6, 7])


def test_non_silence_custom_labels():
    phones = [PhoneSegment("pause", 0.0, 0.1)]
    assert len(non_silence_indices(5, phones)) == 5
    assert len(non_silence_indices(5, phones, silence_labels=("pause",))) == 0


def test_non_silence_unlabeled_frames_kept():
    kept = non_silence_indices(4, [])
    np.testing.assert_array_equal(kept, [0, 1, 2, 3])


def test_contiguous_runs_examples():
    assert contiguous_runs(np.array([])) == []
    assert contiguous_runs(np.array([3])) == [(3, 4)]
    assert contiguous_runs(np.array([0, 1, 2, 5, 6, 9])) == [(0, 3), (5, 7), (9, 10)]


@given(st.sets(st.integers(0, 60), max_size=40))
def test_contiguous_runs_reconstruct(idx_set):
    idx = np.array(sorted(idx_set))
    runs = contiguous_runs(idx)
    rebuilt = [i for a, b in runs for i in range(a, b)]
    assert rebuilt == sorted(idx_set)
    for (a1, b1), (a2, b2) in zip(runs, runs[1:]):
        assert b1 < a2  # maximal: no adjacent runs


def test_build_utterances_splits_at_silence():
    phones = [PhoneSegment("a", 0.0, 0.1), PhoneSegment("sil", 0.1, 0.2),
              PhoneSegment("b", 0.2, 0.3)]
    utts = build_utterances("acq1", 15, phones)
    assert utts == [Utterance("acq1", 0, 5), Utterance("acq1", 10, 15)]
    assert utts[0].n_frames == 5
    assert utts[0].duration_s == pytest.approx(0.1)


# -- duration subsets --------------------------------------------------------------


def _utts(lengths, acq="a"):
    out = []
    pos = 0
    for n in lengths:
        out.append(Utterance(acq, pos, pos + n))
        pos += n + 3
    return out


def test_subset_none_returns_all_sorted():
    utts = _utts([10, 20, 5])
    assert subset_by_duration(list(reversed(utts)), None, 0) == utts


def test_subset_crossing_utterance_included():
    utts = _utts([50, 50, 50])  # 1 s each
    out = subset_by_duration(utts, 1.5, seed=4)
    assert len(out) == 2
    assert sum(u.duration_s for u in out) >= 1.5


def test_subsets_are_nested():
    utts = _utts([25, 50, 75, 100, 50, 25])
    small = set(subset_by_duration(utts, 1.0, seed=9))
    large = set(subset_by_duration(utts, 3.0, seed=9))
    assert small <= large


def test_subset_target_beyond_total():
    with pytest.raises(StructuralError, match="available"):
        subset_by_duration(_utts([50]), 100.0, seed=0)


def test_subset_deterministic():
    utts = _utts([30, 40, 50, 60])
    assert subset_by_duration(utts, 1.5, 11) == subset_by_duration(utts, 1.5, 11)


# -- corpus loading and preparation ---------------------------------------------------


def test_load_corpus_errors(tmp_path):
    with pytest.raises(StructuralError, match="manifest"):
        load_corpus(tmp_path)
    (tmp_path / "corpus.json").write_text("{bad json")
    with pytest.raises(StructuralError, match="JSON"):
        load_corpus(tmp_path)
    (tmp_path / "corpus.json").write_text(json.dumps({"schema": "Other"}))
    with pytest.raises(StructuralError, match="schema"):
        load_corpus(tmp_path)
    (tmp_path / "corpus.json").write_text(json.dumps(
        {"schema": "CorpusV1", "session_id": "s", "pixel_mm": 1.0,
         "acquisitions": []}))
    with pytest.raises(StructuralError, match="empty"):
        load_corpus(tmp_path)


@pytest.fixture(scope="module")
def prepared_pair(tiny_corpus):
    corpus = load_corpus(tiny_corpus)
    return (corpus, prepare_corpus(corpus, "lcc30"),
            prepare_corpus(corpus, "mfcc39"))


def test_prepare_corpus_pooled_feature_stats(prepared_pair):
    _, prep, _ = prepared_pair
    pooled = np.concatenate([prep.acqs[a].feat for a in sorted(prep.acqs)])
    np.testing.assert_allclose(pooled.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(pooled.std(axis=0), 1.0, atol=1e-9)
    assert prep.feat_dim == 30 and prep.kind == "lcc30"


def test_prepare_corpus_same_utterances_across_kinds(prepared_pair):
    _, lcc, mfcc = prepared_pair
    for a in lcc.acqs:
        assert lcc.acqs[a].utterances == mfcc.acqs[a].utterances
        assert lcc.acqs[a].phones == mfcc.acqs[a].phones


def test_prepare_corpus_targets_match_contour_files(prepared_pair):
    corpus, prep, _ = prepared_pair
    import vtinv.fileio as fileio
    entry = corpus.entries[0]
    acq = fileio.read_contours(corpus.root / entry.contours)
    n = prep.acqs[entry.id].n_frames
    np.testing.assert_array_equal(
        prep.acqs[entry.id].target_mm, frames_to_matrix(acq.frames[:n]))
    assert len(prep.acqs[entry.id].truth_frames) == n
    # normalization round-trips back to mm
    a = prep.acqs[entry.id]
    np.testing.assert_allclose(
        a.target_norm * a.state.std + a.state.moving_means, a.target_mm,
        atol=1e-9)


def test_utterances_of_unknown_acq(prepared_pair):
    _, prep, _ = prepared_pair
    with pytest.raises(StructuralError, match="unknown"):
        utterances_of(prep, ["nope"])


def test_samples_from_slices(prepared_pair):
    _, prep, _ = prepared_pair
    acq_id = sorted(prep.acqs)[0]
    utts = prep.acqs[acq_id].utterances[:2]
    samples = samples_from(prep, utts)
    assert len(samples) == len(utts)
    for s, u in zip(samples, utts):
        assert s.id == f"{u.acq_id}:{u.start}-{u.stop}"
        np.testing.assert_array_equal(s.x, prep.acqs[acq_id].feat[u.start:u.stop])
        np.testing.assert_array_equal(
            s.y, prep.acqs[acq_id].target_norm[u.start:u.stop])


def test_constant_mean_baseline_oracle(prepared_pair):
    _, prep, _ = prepared_pair
    utts = utterances_of(prep, sorted(prep.acqs)[:2])
    base = constant_mean_baseline(prep, utts)
    rows = np.concatenate([prep.acqs[u.acq_id].target_mm[u.start:u.stop]
                           for u in utts])
    np.testing.assert_allclose(base, rows.mean(axis=0), atol=1e-12)
    assert base.shape == (800,)


# -- landmark merging --------------------------------------------------------------------


def test_merge_landmark_frames_uses_truth_landmarks():
    rng = np.random.default_rng(0)
    truth = [random_frame(rng, frame_index=i) for i in range(3)]
    pred_rows = frames_to_matrix([random_frame(rng, frame_index=i)
                                  for i in range(3)])
    merged = merge_landmark_frames(pred_rows, truth)
    assert [f.frame_index for f in merged] == [0, 1, 2]
    for f, t, row in zip(merged, truth, pred_rows):
        for lm in LANDMARKS:
            np.testing.assert_array_equal(f.contours[lm].points,
                                          t.contours[lm].points)
        np.testing.assert_array_equal(frames_to_matrix([f])[0], row)


# -- evaluation of a condition --------------------------------------------------------------


def test_evaluate_model_perfect_prediction(prepared_pair, monkeypatch):
    _, prep, _ = prepared_pair
    test_ids = sorted(prep.acqs)[:2]
    test_utts = utterances_of(prep, test_ids)
    # replay the normalized truth in evaluate_model's deterministic call order
    expected = [prep.acqs[u.acq_id].target_norm[u.start:u.stop]
                for u in sorted(test_utts, key=lambda u: (u.acq_id, u.start))]
    queue = iter(expected)
    monkeypatch.setattr(network, "forward", lambda model, x: next(queue).copy())
    pca = fit_corpus_velum_pca(prep)
    base = constant_mean_baseline(prep, test_utts)
    ev = evaluate_model(prep, object(), test_utts, pca_model=pca,
                        baseline_row=base, name="perfect")
    assert ev.report.overall_mean < 1e-9
    assert ev.baseline_overall_mean > 0.1
    assert ev.report.vel_accuracy is None or ev.report.vel_accuracy == 1.0
    for name, r in ev.report.per_tv_pearson.items():
        if r is not None:
            assert r == pytest.approx(1.0, abs=1e-6), name
    assert ev.n_test_frames == sum(u.n_frames for u in test_utts)
    assert "frame_mean" in ev.phone_scores


def test_evaluate_model_requires_utterances(prepared_pair):
    _, prep, _ = prepared_pair
    with pytest.raises(StructuralError):
        evaluate_model(prep, object(), [])


def test_paired_significance_identical_conditions_flagged(prepared_pair, monkeypatch):
    _, prep, _ = prepared_pair
    test_utts = utterances_of(prep, sorted(prep.acqs)[:2])

    def fake_forward(model, x):
        return np.zeros((x.shape[0], 800))

    monkeypatch.setattr(network, "forward", fake_forward)
    ev = evaluate_model(prep, object(), test_utts, name="same")
    out = paired_significance(ev, ev)
    assert out  # every articulator key compared
    for key, entry in out.items():
        assert entry.get("degenerate") or entry.get("insufficient"), key
        assert "reason" in entry


def test_paired_significance_detects_real_difference(prepared_pair, monkeypatch):
    _, prep, _ = prepared_pair
    test_utts = utterances_of(prep, sorted(prep.acqs)[:3])

    def noisy(scale):
        rng = np.random.default_rng(42)

        def fwd(model, x):
            return rng.normal(scale=scale, size=(x.shape[0], 800))

        return fwd

    monkeypatch.setattr(network, "forward", noisy(0.01))
    a = evaluate_model(prep, object(), test_utts, name="good")
    monkeypatch.setattr(network, "forward", noisy(5.0))
    b = evaluate_model(prep, object(), test_utts, name="bad")
    out = paired_significance(a, b)
    fm = out["frame_mean"]
    assert fm.get("significant") is True
    assert fm["p_value"] < 0.05


# -- velum PCA over the corpus -----------------------------------------------------------------


def test_fit_corpus_velum_pca(prepared_pair):
    _, prep, _ = prepared_pair
    model = fit_corpus_velum_pca(prep)
    n_frames = sum(a.n_frames for a in prep.acqs.values())
    assert n_frames >= 50
    assert model.component.shape == (50,)
    assert 0.0 < model.explained_variance_ratio <= 1.0

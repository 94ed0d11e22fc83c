import hashlib
import json
from dataclasses import asdict

import numpy as np
import pytest

from vtinv import network
from vtinv.errors import DivergenceError, StructuralError
from vtinv.network import BiLstmModel
from vtinv.training import (AdamState, Sample, TrainConfig, Trainer,
                            build_model, checkpoint_sha256, load_model,
                            rng_for_epoch, rng_for_init)

TINY = dict(epochs=300, batch_size=2, dense_units=2, lstm_units=2, seed=3)


def tiny_cfg(**kw):
    return TrainConfig(**{**TINY, **kw})


def make_samples(n, t=4, f=3, d=4, seed=0, prefix="u"):
    rng = np.random.default_rng(seed)
    return [Sample(id=f"{prefix}{i:02d}", x=rng.normal(size=(t, f)),
                   y=rng.normal(size=(t, d))) for i in range(n)]


def make_trainer(cfg=None, n=4):
    cfg = cfg or tiny_cfg()
    model = build_model(3, cfg, output_dim=4)
    return Trainer(model, cfg), make_samples(n)


# -- Adam ---------------------------------------------------------------------


def test_adam_single_step_hand_oracle():
    cfg = tiny_cfg(learning_rate=0.1)
    w = np.array([1.0, -2.0, 0.5])
    g = np.array([0.3, -0.7, 0.0])
    adam = AdamState({"w": w})
    adam.step({"w": w}, {"w": g.copy()}, cfg)
    # first step: m_hat = g, v_hat = g*g, update = -lr * g / (|g| + eps)
    expect = np.array([1.0, -2.0, 0.5]) - 0.1 * g / (np.abs(g) + cfg.epsilon)
    np.testing.assert_allclose(w, expect, rtol=1e-15)
    assert adam.t == 1


def test_adam_two_steps_match_recurrence():
    cfg = tiny_cfg(learning_rate=0.01)
    w = np.array([0.2, -0.4])
    grads = [np.array([1.0, -1.0]), np.array([-0.5, 2.0])]
    adam = AdamState({"w": w})
    # independent recurrence
    m = np.zeros(2)
    v = np.zeros(2)
    ref = w.copy()
    for t, g in enumerate(grads, start=1):
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        mh = m / (1 - cfg.beta1**t)
        vh = v / (1 - cfg.beta2**t)
        ref -= cfg.learning_rate * mh / (np.sqrt(vh) + cfg.epsilon)
    for g in grads:
        adam.step({"w": w}, {"w": g}, cfg)
    np.testing.assert_allclose(w, ref, rtol=1e-15)


def test_adam_updates_in_place():
    cfg = tiny_cfg()
    model = build_model(3, cfg, output_dim=4)
    before = {k: v for k, v in model.parameters().items()}  # same objects
    adam = AdamState(model.parameters())
    grads = {k: np.ones_like(v) for k, v in model.parameters().items()}
    adam.step(model.parameters(), grads, cfg)
    for k, arr in model.parameters().items():
        assert arr is before[k]  # mutated, not replaced


# -- rng policy ----------------------------------------------------------------


def test_rng_streams_deterministic_and_distinct():
    assert rng_for_init(5).random() == rng_for_init(5).random()
    assert rng_for_epoch(5, 2).random() == rng_for_epoch(5, 2).random()
    vals = {rng_for_init(5).random(), rng_for_epoch(5, 0).random(),
            rng_for_epoch(5, 1).random(), rng_for_init(6).random()}
    assert len(vals) == 4


def test_build_model_seeded():
    a = build_model(3, tiny_cfg(seed=9), output_dim=4)
    b = build_model(3, tiny_cfg(seed=9), output_dim=4)
    c = build_model(3, tiny_cfg(seed=10), output_dim=4)
    assert np.array_equal(a.dense1_W, b.dense1_W)
    assert not np.array_equal(a.dense1_W, c.dense1_W)


# -- sample validation ------------------------------------------------------------


def test_sample_check_errors():
    good = Sample("s", np.zeros((4, 3)), np.zeros((4, 5)))
    good.check(3, 5)
    with pytest.raises(StructuralError, match="frames"):
        Sample("s", np.zeros((4, 3)), np.zeros((3, 5))).check(3, 5)
    with pytest.raises(StructuralError, match="feature dim"):
        Sample("s", np.zeros((4, 2)), np.zeros((4, 5))).check(3, 5)
    with pytest.raises(StructuralError, match="target dim"):
        Sample("s", np.zeros((4, 3)), np.zeros((4, 4))).check(3, 5)
    with pytest.raises(StructuralError, match="2-D"):
        Sample("s", np.zeros(4), np.zeros((4, 5))).check(3, 5)


# -- early stopping -----------------------------------------------------------------


def test_patience_stops_after_ten_flat_epochs(monkeypatch):
    # monitored values 5, 4, then ten 6s: training halts after twelve
    # epochs with the second one retained as best
    losses = iter([5.0, 4.0] + [6.0] * 30)
    monkeypatch.setattr(Trainer, "_val_loss", lambda self, vs: next(losses))
    trainer, samples = make_trainer(tiny_cfg(early_stop_patience=10))
    trainer.run(samples, make_samples(2, prefix="v"))
    assert len(trainer.history) == 12
    assert trainer.best_epoch == 1
    assert trainer.stopped_early
    assert trainer.best_val_loss == 4.0


def test_improvement_must_be_strict(monkeypatch):
    losses = iter([5.0, 5.0, 5.0, 5.0])
    monkeypatch.setattr(Trainer, "_val_loss", lambda self, vs: next(losses))
    trainer, samples = make_trainer(tiny_cfg(early_stop_patience=2))
    trainer.run(samples, make_samples(2, prefix="v"))
    assert trainer.best_epoch == 0
    assert len(trainer.history) == 3  # epochs 1 and 2 exhaust the patience
    assert trainer.stopped_early


def test_best_model_holds_best_params(monkeypatch):
    losses = iter([3.0] + [9.0] * 20)
    monkeypatch.setattr(Trainer, "_val_loss", lambda self, vs: next(losses))
    trainer, samples = make_trainer(tiny_cfg(early_stop_patience=3))
    trainer.run(samples, make_samples(2, prefix="v"))
    best = trainer.best_model()
    for k, v in best.parameters().items():
        assert np.array_equal(v, trainer.best_params[k])
    # training kept moving after the best epoch
    assert any(not np.array_equal(trainer.model.parameters()[k], v)
               for k, v in trainer.best_params.items())


def test_epoch_budget_exhausts():
    trainer, samples = make_trainer(tiny_cfg(epochs=3))
    trainer.run(samples, None)
    assert trainer.epoch == 3 and len(trainer.history) == 3
    trainer.run(samples, None)  # budget used up, no-op
    assert trainer.epoch == 3


def test_run_rejects_empty_train_set():
    trainer, _ = make_trainer()
    with pytest.raises(StructuralError):
        trainer.run([], None)


def test_train_loss_monitored_without_val_set():
    trainer, samples = make_trainer(tiny_cfg(epochs=2))
    trainer.run(samples, None)
    assert all(h["val_loss"] is None for h in trainer.history)
    assert trainer.best_epoch >= 0


# -- determinism ---------------------------------------------------------------------


def test_two_runs_bit_identical():
    a, samples_a = make_trainer(tiny_cfg(epochs=3))
    b, samples_b = make_trainer(tiny_cfg(epochs=3))
    a.run(samples_a, None)
    b.run(samples_b, None)
    for k, v in a.model.parameters().items():
        assert np.array_equal(v, b.model.parameters()[k]), k
    assert a.history == b.history


def test_batch_order_invariant_to_caller_list_order():
    a, samples = make_trainer(tiny_cfg(epochs=2, batch_size=3), n=7)
    b, _ = make_trainer(tiny_cfg(epochs=2, batch_size=3), n=7)
    shuffled = list(reversed(make_samples(7)))
    a.run(samples, None)
    b.run(shuffled, None)
    for k, v in a.model.parameters().items():
        assert np.array_equal(v, b.model.parameters()[k]), k
    assert a.history == b.history


def test_incremental_run_matches_single_run():
    a, samples = make_trainer(tiny_cfg(epochs=4))
    b, _ = make_trainer(tiny_cfg(epochs=4))
    a.run(samples, None)
    b.run(make_samples(4), None, max_new_epochs=2)
    b.run(make_samples(4), None, max_new_epochs=2)
    for k, v in a.model.parameters().items():
        assert np.array_equal(v, b.model.parameters()[k]), k


# -- gradient clipping ----------------------------------------------------------------


def test_huge_clip_norm_is_identity():
    a, samples = make_trainer(tiny_cfg(epochs=2))
    b, _ = make_trainer(tiny_cfg(epochs=2, clip_norm=1e9))
    a.run(samples, None)
    b.run(make_samples(4), None)
    for k, v in a.model.parameters().items():
        assert np.array_equal(v, b.model.parameters()[k]), k


def test_clip_norm_scales_batch_gradient():
    clip = 1e-3
    cfg = tiny_cfg(epochs=1, batch_size=1, clip_norm=clip)
    trainer, _ = make_trainer(cfg, n=1)
    sample = make_samples(1)[0]
    # independent replica of one clipped step
    ref_model = build_model(3, cfg, output_dim=4)
    _, grads, _ = network.backward(ref_model, sample.x, sample.y)
    gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    assert gnorm > clip  # the test is vacuous otherwise
    scaled = {k: g * (clip / gnorm) for k, g in grads.items()}
    adam = AdamState(ref_model.parameters())
    adam.step(ref_model.parameters(), scaled, cfg)
    trainer.run([Sample(sample.id, sample.x.copy(), sample.y.copy())], None)
    for k, v in trainer.model.parameters().items():
        assert np.array_equal(v, ref_model.parameters()[k]), k


# -- divergence -------------------------------------------------------------------------


def test_divergence_reports_epoch_and_sample():
    trainer, _ = make_trainer()
    bad = [Sample("boom", np.ones((3, 3)), np.full((3, 4), 1e200))]
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError, match=r"epoch 0 \(boom\)"):
            trainer.run(bad, None)


# -- persistence --------------------------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(tmp_path):
    trainer, samples = make_trainer(tiny_cfg(epochs=2))
    trainer.run(samples, make_samples(2, prefix="v"))
    p = tmp_path / "ck.vtck"
    trainer.save(p)
    loaded = Trainer.load(p)
    for k, v in trainer.model.parameters().items():
        assert np.array_equal(v, loaded.model.parameters()[k]), k
        assert np.array_equal(trainer.adam.m[k], loaded.adam.m[k])
        assert np.array_equal(trainer.adam.v[k], loaded.adam.v[k])
        assert np.array_equal(trainer.best_params[k], loaded.best_params[k])
    assert loaded.adam.t == trainer.adam.t
    assert loaded.epoch == trainer.epoch
    assert loaded.best_epoch == trainer.best_epoch
    assert loaded.best_val_loss == trainer.best_val_loss
    assert loaded.history == trainer.history
    assert loaded.cfg == trainer.cfg
    # re-saving the loaded state reproduces the file byte for byte
    p2 = tmp_path / "ck2.vtck"
    loaded.save(p2)
    assert checkpoint_sha256(p) == checkpoint_sha256(p2)


def test_history_without_val_round_trips_none(tmp_path):
    trainer, samples = make_trainer(tiny_cfg(epochs=2))
    trainer.run(samples, None)
    p = tmp_path / "ck.vtck"
    trainer.save(p)
    loaded = Trainer.load(p)
    assert all(h["val_loss"] is None for h in loaded.history)
    assert loaded.history == trainer.history


def test_resume_from_disk_matches_uninterrupted(tmp_path):
    direct, samples = make_trainer(tiny_cfg(epochs=4))
    direct.run(samples, make_samples(2, prefix="v"))

    half, _ = make_trainer(tiny_cfg(epochs=4))
    half.run(make_samples(4), make_samples(2, prefix="v"), max_new_epochs=2)
    p = tmp_path / "half.vtck"
    half.save(p)
    resumed = Trainer.load(p)
    resumed.run(make_samples(4), make_samples(2, prefix="v"))

    for k, v in direct.model.parameters().items():
        assert np.array_equal(v, resumed.model.parameters()[k]), k
    assert direct.history == resumed.history
    assert direct.best_epoch == resumed.best_epoch


def test_load_model_returns_best(tmp_path):
    trainer, samples = make_trainer(tiny_cfg(epochs=2))
    trainer.run(samples, None)
    p = tmp_path / "ck.vtck"
    trainer.save(p)
    m = load_model(p)
    assert isinstance(m, BiLstmModel)
    for k, v in m.parameters().items():
        assert np.array_equal(v, trainer.best_params[k])


# -- config hash ------------------------------------------------------------------------------


def test_config_hash_is_sha256_of_sorted_json():
    cfg = tiny_cfg()
    expect = hashlib.sha256(
        json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest()
    assert cfg.config_hash() == expect
    assert cfg.config_hash() == tiny_cfg().config_hash()
    assert cfg.config_hash() != tiny_cfg(seed=99).config_hash()

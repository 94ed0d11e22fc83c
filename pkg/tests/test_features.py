import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vtinv import features
from vtinv.errors import StructuralError
from vtinv.features import (SessionStats, StftConfig, add_deltas,
                            align_to_50hz, apply_norm, dct_matrix,
                            extract_features, fit_session_stats, frame_signal,
                            hann_periodic, invert_norm, lcc, mel_filterbank,
                            mfcc, pre_emphasize, real_cepstrum)

CFG = StftConfig()


# -- independent oracles -------------------------------------------------------


def dft_mag(frame, n):
    """O(N^2) direct DFT magnitude of the zero-padded frame (bins 0..n/2)."""
    x = np.zeros(n)
    x[: len(frame)] = frame
    k = np.arange(n // 2 + 1)
    ang = -2j * np.pi * np.outer(k, np.arange(n)) / n
    return np.abs(np.exp(ang) @ x)


def mfcc_oracle(audio, cfg=CFG):
    """From-scratch MFCC using the direct DFT and explicit loops."""
    emph = np.concatenate([[audio[0]],
                           audio[1:] - cfg.pre_emphasis * audio[:-1]])
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(cfg.window_samples)
                             / cfg.window_samples)
    t = 1 + (len(audio) - cfg.window_samples) // cfg.hop_samples
    bank = mel_filterbank(cfg.n_mel, cfg.fft_size)
    out = np.empty((t, cfg.n_mfcc))
    for i in range(t):
        fr = emph[i * cfg.hop_samples : i * cfg.hop_samples + cfg.window_samples]
        power = dft_mag(fr * win, cfg.fft_size) ** 2
        logmel = np.log(np.maximum(bank @ power, 1e-10))
        for k in range(cfg.n_mfcc):
            scale = np.sqrt(1.0 / cfg.n_mel) if k == 0 else np.sqrt(2.0 / cfg.n_mel)
            out[i, k] = scale * np.sum(
                logmel * np.cos(np.pi * k * (2 * np.arange(cfg.n_mel) + 1)
                                / (2 * cfg.n_mel)))
    return out


def lcc_oracle(audio, cfg=CFG):
    """From-scratch LCC: direct DFT, log magnitude, inverse DFT."""
    emph = np.concatenate([[audio[0]],
                           audio[1:] - cfg.pre_emphasis * audio[:-1]])
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(cfg.window_samples)
                             / cfg.window_samples)
    t = 1 + (len(audio) - cfg.window_samples) // cfg.hop_samples
    n = cfg.fft_size
    out = np.empty((t, cfg.n_lcc))
    for i in range(t):
        fr = np.zeros(n)
        fr[: cfg.window_samples] = emph[
            i * cfg.hop_samples : i * cfg.hop_samples + cfg.window_samples] * win
        spec = np.fft.fft(fr)
        logmag = np.log(np.maximum(np.abs(spec), 1e-10))
        # inverse DFT of an even real sequence: cosine sum
        for q in range(cfg.n_lcc):
            out[i, q] = np.real(
                np.sum(logmag * np.exp(2j * np.pi * q * np.arange(n) / n))) / n
    return out


# -- framing / windows ----------------------------------------------------------


def test_frame_count_arithmetic():
    for n in (400, 401, 559, 560, 561, 16000):
        audio = np.zeros(n)
        t = frame_signal(audio, CFG).shape[0]
        assert t == 1 + (n - 400) // 160


def test_frame_signal_too_short_raises():
    with pytest.raises(StructuralError):
        frame_signal(np.zeros(399), CFG)


def test_stft_config_validation():
    with pytest.raises(StructuralError):
        StftConfig(window_ms=10.0, hop_ms=25.0)


def test_pre_emphasis_formula():
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(pre_emphasize(x, 0.97),
                               [1.0, 2.0 - 0.97, 3.0 - 0.97 * 2.0])


def test_dct_orthonormality():
    m = dct_matrix(26, 26)
    np.testing.assert_allclose(m @ m.T, np.eye(26), atol=1e-12)


def test_mel_filterbank_shape_and_support():
    bank = mel_filterbank(26, 512)
    assert bank.shape == (26, 257)
    assert np.all(bank >= 0.0)
    # every filter has nonzero support; supports are ordered by center
    centers = [np.argmax(row) for row in bank]
    assert all(bank[j].max() > 0 for j in range(26))
    assert centers == sorted(centers)


# -- MFCC -----------------------------------------------------------------------


def test_mfcc_silence_only_c0():
    out = mfcc(np.zeros(16000))
    assert np.allclose(out[:, 1:], 0.0, atol=1e-12)
    assert np.allclose(out, out[0], atol=1e-12)  # all frames identical
    assert abs(out[0, 0]) > 0


def test_mfcc_sine_matches_oracle():
    t = np.arange(3200) / 16000.0
    audio = 0.5 * np.sin(2 * np.pi * 1000.0 * t)
    ours = mfcc(audio)
    ref = mfcc_oracle(audio)
    assert ours.shape == ref.shape == (1 + (3200 - 400) // 160, 13)
    np.testing.assert_allclose(ours, ref, atol=1e-6)


def test_mfcc_random_frames_match_oracle():
    rng = np.random.default_rng(0)
    audio = rng.normal(size=2000) * 0.1
    np.testing.assert_allclose(mfcc(audio), mfcc_oracle(audio), atol=1e-6)


def test_mfcc_hop_shift_property():
    rng = np.random.default_rng(1)
    audio = rng.normal(size=4000) * 0.1
    a = mfcc(audio)
    b = mfcc(audio[160:])
    # pre-emphasis couples only the first sample; interior frames align
    np.testing.assert_allclose(a[1 + 1 :], b[1:], atol=1e-9)


# -- LCC ------------------------------------------------------------------------


def test_real_cepstrum_impulse_flat_spectrum():
    frame = np.zeros(400)
    frame[0] = 1.0
    c = real_cepstrum(frame, 512, 30)
    assert np.allclose(c[1:], 0.0, atol=1e-12)
    assert c[0] == pytest.approx(0.0, abs=1e-12)  # log|1| = 0


def test_real_cepstrum_echo_peak_at_lag():
    k = 17
    frame = np.zeros(400)
    frame[0] = 1.0
    frame[k] = 0.5
    c = real_cepstrum(frame, 512, 30)
    # analytic: real cepstrum of 1 + a*z^-k is a/2 at quefrency k
    assert np.argmax(np.abs(c[1:])) + 1 == k
    assert c[k] == pytest.approx(0.25, abs=1e-3)


def test_lcc_random_matches_oracle_1e9():
    rng = np.random.default_rng(2)
    audio = rng.normal(size=1600) * 0.2
    np.testing.assert_allclose(lcc(audio), lcc_oracle(audio), atol=1e-9)


def test_lcc_silence_constant_frames():
    out = lcc(np.zeros(2000))
    assert np.allclose(out[:, 1:], 0.0, atol=1e-12)
    assert np.allclose(out, out[0], atol=1e-12)


# -- deltas ----------------------------------------------------------------------


def delta_oracle(x):
    t_len, f = x.shape
    out = np.empty_like(x)
    for t in range(t_len):
        num = np.zeros(f)
        for n in (1, 2):
            hi = x[min(t + n, t_len - 1)]
            lo = x[max(t - n, 0)]
            num += n * (hi - lo)
        out[t] = num / (2.0 * (1 + 4))
    return out


def test_deltas_constant_matrix_zero():
    m = np.tile([3.0, -1.0], (6, 1))
    out = add_deltas(m)
    assert out.shape == (6, 6)
    np.testing.assert_allclose(out[:, 2:], 0.0, atol=1e-15)


def test_deltas_linear_ramp():
    m = np.arange(12.0)[:, None]
    out = add_deltas(m)
    # interior: slope 1; edge replication shrinks the first/last two deltas,
    # which bleeds two more rows into the second derivative
    np.testing.assert_allclose(out[2:-2, 1], 1.0, atol=1e-12)
    np.testing.assert_allclose(out[4:-4, 2], 0.0, atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.integers(1, 9), st.integers(1, 4))
def test_deltas_match_regression_oracle(seed, t_len, f):
    x = np.random.default_rng(seed).normal(size=(t_len, f))
    out = add_deltas(x)
    d1 = delta_oracle(x)
    np.testing.assert_allclose(out[:, f : 2 * f], d1, atol=1e-12)
    np.testing.assert_allclose(out[:, 2 * f :], delta_oracle(d1), atol=1e-12)


# -- alignment -------------------------------------------------------------------


def test_align_pairs():
    m = np.array([[1.0], [1.0], [5.0], [7.0]])
    np.testing.assert_allclose(align_to_50hz(m), [[1.0], [6.0]])


def test_align_odd_tail_dropped():
    m = np.arange(5.0)[:, None]
    out = align_to_50hz(m)
    assert out.shape == (2, 1)
    np.testing.assert_allclose(out[:, 0], [0.5, 2.5])


@given(st.integers(0, 2**31 - 1), st.integers(0, 11), st.integers(1, 5))
def test_align_matches_pair_mean_oracle(seed, t_len, f):
    m = np.random.default_rng(seed).normal(size=(t_len, f))
    out = align_to_50hz(m)
    assert out.shape == (t_len // 2, f)
    for i in range(t_len // 2):
        np.testing.assert_array_equal(out[i], 0.5 * (m[2 * i] + m[2 * i + 1]))


# -- session stats ----------------------------------------------------------------


def test_session_stats_znorm_properties():
    rng = np.random.default_rng(3)
    mats = [rng.normal(loc=5.0, scale=3.0, size=(40, 4)) for _ in range(3)]
    stats = fit_session_stats(mats, "s1")
    z = np.concatenate([apply_norm(m, stats) for m in mats])
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-10)


def test_session_stats_round_trip_1e12():
    rng = np.random.default_rng(4)
    m = rng.normal(size=(30, 6)) * 10 + 3
    stats = fit_session_stats([m], "s")
    np.testing.assert_allclose(invert_norm(apply_norm(m, stats), stats), m, atol=1e-12)


def test_session_stats_are_per_session():
    rng = np.random.default_rng(5)
    base = rng.normal(size=(50, 3))
    s1 = fit_session_stats([base], "a")
    s2 = fit_session_stats([base + 10.0], "b")
    assert not np.allclose(s1.mean, s2.mean)
    np.testing.assert_allclose(s2.mean - s1.mean, 10.0, atol=1e-12)


def test_session_stats_constant_column_floored(caplog):
    m = np.ones((10, 2))
    m[:, 1] = np.arange(10.0)
    with caplog.at_level("WARNING"):
        stats = fit_session_stats([m], "s")
    assert stats.std[0] == features.STD_FLOOR
    assert "floored" in caplog.text
    z = apply_norm(m, stats)
    np.testing.assert_allclose(z[:, 0], 0.0, atol=1e-12)


def test_session_stats_needs_two_frames():
    with pytest.raises(StructuralError):
        fit_session_stats([np.ones((1, 3))], "s")


def test_align_commutes_with_frozen_norm():
    rng = np.random.default_rng(6)
    m = rng.normal(size=(20, 5))
    stats = fit_session_stats([m], "s")
    a = align_to_50hz(apply_norm(m, stats))
    b = apply_norm(align_to_50hz(m), stats)
    np.testing.assert_allclose(a, b, atol=1e-12)


# -- full pipeline -----------------------------------------------------------------


def test_extract_features_dims_and_rate():
    rng = np.random.default_rng(7)
    audio = rng.normal(size=16000) * 0.1
    m39 = extract_features(audio, "mfcc39")
    m30 = extract_features(audio, "lcc30")
    t100 = 1 + (16000 - 400) // 160
    assert m39.shape == (t100 // 2, 39)
    assert m30.shape == (t100 // 2, 30)
    assert np.all(np.isfinite(m39)) and np.all(np.isfinite(m30))
    with pytest.raises(StructuralError):
        extract_features(audio, "embedding768")


def test_extract_features_deterministic():
    rng = np.random.default_rng(8)
    audio = rng.normal(size=8000) * 0.1
    a = extract_features(audio, "mfcc39")
    b = extract_features(audio.copy(), "mfcc39")
    assert np.array_equal(a, b)

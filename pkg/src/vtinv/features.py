"""Acoustic feature extraction and per-session normalization.

Frozen conventions (the corpus fixes only 13 coefficients / 25 ms window
/ 10 ms hop; everything else is part of this toolkit's definition):

* pre-emphasis 0.97 applied to the whole signal, periodic Hann window,
  FFT size 512 for 400-sample windows at 16 kHz;
* MFCC: 26 triangular mel filters on 0-8 kHz, area-normalized
  (2 / bandwidth), natural log with a 1e-10 floor on band energies,
  orthonormal DCT-II, coefficients c0..c12 kept;
* LCC: real cepstrum of the floored log magnitude spectrum, c0..c29;
* deltas: +-2-frame regression with replicated edges, applied before
  session normalization;
* 100 -> 50 Hz alignment by adjacent-pair averaging, odd tail dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .datamodel import AUDIO_RATE_HZ
from .errors import StructuralError

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8
LOG_FLOOR = 1e-10

FEATURE_DIMS = {"mfcc39": 39, "lcc30": 30, "embedding768": 768}


@dataclass(frozen=True)
class StftConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fft_size: int = 512
    pre_emphasis: float = 0.97
    n_mel: int = 26
    n_mfcc: int = 13
    n_lcc: int = 30

    def __post_init__(self):
        if not self.window_ms > self.hop_ms > 0:
            raise StructuralError("requires window_ms > hop_ms > 0")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_ms * AUDIO_RATE_HZ / 1000.0))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * AUDIO_RATE_HZ / 1000.0))


def pre_emphasize(audio: np.ndarray, coeff: float) -> np.ndarray:
    y = np.asarray(audio, dtype=np.float64).copy()
    y[1:] -= coeff * y[:-1]
    return y


def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(audio: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Slice audio into overlapping frames; T = 1 + (N - win) // hop."""
    n = len(audio)
    win, hop = cfg.window_samples, cfg.hop_samples
    if n < win:
        raise StructuralError(f"audio has {n} samples, one window needs {win}")
    t = 1 + (n - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(t)[:, None]
    return np.asarray(audio, dtype=np.float64)[idx]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mel: int, fft_size: int, sample_rate: float = AUDIO_RATE_HZ,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """Triangular area-normalized mel filters over rfft bins, (n_mel, fft//2+1)."""
    if f_max is None:
        f_max = sample_rate / 2.0
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mel + 2))
    bins_hz = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    bank = np.zeros((n_mel, bins_hz.size))
    for j in range(n_mel):
        lo, ctr, hi = edges_hz[j], edges_hz[j + 1], edges_hz[j + 2]
        rising = (bins_hz - lo) / (ctr - lo)
        falling = (hi - bins_hz) / (hi - ctr)
        bank[j] = np.maximum(0.0, np.minimum(rising, falling)) * (2.0 / (hi - lo))
    return bank


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II: rows k = 0..n_out-1 over n_in inputs."""
    k = np.arange(n_out)[:, None]
    j = np.arange(n_in)[None, :]
    m = np.sqrt(2.0 / n_in) * np.cos(np.pi * k * (2 * j + 1) / (2 * n_in))
    m[0] /= np.sqrt(2.0)
    return m


def mfcc(audio: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Mel-frequency cepstral coefficients, (T, 13) at 100 Hz.

    Per frame: pre-emphasis -> Hann -> |FFT|^2 -> mel filterbank ->
    floored natural log -> orthonormal DCT-II -> first 13 coefficients
    (c0 included).
    """
    frames = frame_signal(pre_emphasize(audio, cfg.pre_emphasis), cfg)
    window = hann_periodic(cfg.window_samples)
    power = np.abs(np.fft.rfft(frames * window, cfg.fft_size, axis=1)) ** 2
    bank = mel_filterbank(cfg.n_mel, cfg.fft_size)
    logmel = np.log(np.maximum(power @ bank.T, LOG_FLOOR))
    return logmel @ dct_matrix(cfg.n_mfcc, cfg.n_mel).T


def real_cepstrum(frame: np.ndarray, fft_size: int, n_coeffs: int) -> np.ndarray:
    """Low quefrencies of the real cepstrum of one frame (no windowing)."""
    mag = np.abs(np.fft.rfft(frame, fft_size))
    ceps = np.fft.irfft(np.log(np.maximum(mag, LOG_FLOOR)), fft_size)
    return ceps[:n_coeffs]


def lcc(audio: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Linear cepstral coefficients c0..c29, (T, 30) at 100 Hz."""
    frames = frame_signal(pre_emphasize(audio, cfg.pre_emphasis), cfg)
    window = hann_periodic(cfg.window_samples)
    mag = np.abs(np.fft.rfft(frames * window, cfg.fft_size, axis=1))
    ceps = np.fft.irfft(np.log(np.maximum(mag, LOG_FLOOR)), cfg.fft_size, axis=1)
    return ceps[:, : cfg.n_lcc]


def add_deltas(m: np.ndarray) -> np.ndarray:
    """Append regression deltas and delta-deltas: (T, F) -> (T, 3F)."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise StructuralError(f"need a non-empty (T, F) matrix, got shape {m.shape}")

    def delta(x):
        padded = np.concatenate([x[:1], x[:1], x, x[-1:], x[-1:]], axis=0)
        return (padded[3:-1] - padded[1:-3] + 2.0 * (padded[4:] - padded[:-4])) / 10.0

    d = delta(m)
    return np.concatenate([m, d, delta(d)], axis=1)


def align_to_50hz(m: np.ndarray) -> np.ndarray:
    """Average adjacent 100 Hz rows into 50 Hz rows; odd tail row dropped."""
    m = np.asarray(m, dtype=np.float64)
    t2 = m.shape[0] // 2
    return 0.5 * (m[0 : 2 * t2 : 2] + m[1 : 2 * t2 : 2])


# ---------------------------------------------------------------------------
# Per-session normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SessionStats:
    session_id: str
    mean: np.ndarray  # (F,)
    std: np.ndarray   # (F,), floored at STD_FLOOR


def fit_session_stats(matrices: list, session_id: str) -> SessionStats:
    """Column mean/std pooled over all feature matrices of one session."""
    stacked = np.concatenate([np.asarray(m, dtype=np.float64) for m in matrices], axis=0)
    if stacked.shape[0] < 2:
        raise StructuralError(f"session {session_id}: need at least 2 frames to fit stats")
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    floored = std < STD_FLOOR
    if np.any(floored):
        log.warning("session %s: %d constant feature columns, std floored at %g",
                    session_id, int(floored.sum()), STD_FLOOR)
        std = np.maximum(std, STD_FLOOR)
    return SessionStats(session_id=session_id, mean=mean, std=std)


def apply_norm(m: np.ndarray, stats: SessionStats) -> np.ndarray:
    return (np.asarray(m, dtype=np.float64) - stats.mean) / stats.std


def invert_norm(m: np.ndarray, stats: SessionStats) -> np.ndarray:
    return np.asarray(m, dtype=np.float64) * stats.std + stats.mean


def extract_features(audio: np.ndarray, kind: str, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Full extraction pipeline for one utterance, output at 50 Hz."""
    if kind == "mfcc39":
        return align_to_50hz(add_deltas(mfcc(audio, cfg)))
    if kind == "lcc30":
        return align_to_50hz(lcc(audio, cfg))
    raise StructuralError(f"unknown extractable feature kind: {kind!r}")

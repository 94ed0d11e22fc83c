"""Synthetic corpus generator.

Produces desk-scale corpora in the toolkit's own file formats with a
planted, recoverable acoustic-articulatory link: a low-dimensional latent
trajectory z(t) (sums of low-frequency sinusoids) drives both the contour
motion (linear map onto smooth per-point patterns) and the audio (fixed
sinusoidal carriers whose log-amplitudes are proportional to z).  Cepstral
features of the audio are therefore approximately affine in z, and the
contours exactly affine in z, so a sequence regressor can invert the
mapping.

Geometry is a stylized mid-sagittal layout in mm (anterior = +x, y grows
downward): lips and incisors at high x, the pharyngeal wall a near-vertical
polyline ordered top-to-bottom at low x, the tongue arcing between them,
the velum hanging off the palate's posterior end, vocal folds at the
bottom.  Everything stays inside the 136 px x 1.62 mm/px field of view.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .datamodel import (AUDIO_RATE_HZ, FRAME_RATE_HZ, Acquisition, ArticulatorId,
                        Contour, ContourFrame, PhoneSegment, PREDICTED_ARTICULATORS,
                        POINTS_PER_CONTOUR, FLAT_DIM, COORDS_PER_ARTICULATOR)
from .errors import StructuralError

SAMPLES_PER_FRAME = int(AUDIO_RATE_HZ / FRAME_RATE_HZ)  # 320
PHONE_SET = ("aa", "iy", "uw", "eh", "ah", "ao", "ih")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_acquisitions: int = 20
    frames_per_acq: int = 400
    n_latents: int = 4
    session_id: str = "synth0"
    pixel_mm: float = 1.62
    with_embeddings: bool = True
    embedding_dim: int = 768

    def __post_init__(self):
        if self.n_acquisitions < 1 or self.frames_per_acq < 100:
            raise StructuralError("need n_acquisitions >= 1 and frames_per_acq >= 100")
        if not 1 <= self.n_latents <= 8:
            raise StructuralError("n_latents must be in 1..8")


def _arc(p0, p1, bulge, n: int = POINTS_PER_CONTOUR) -> np.ndarray:
    """Polyline from p0 to p1 bowed sideways by `bulge` mm at midpoint."""
    s = np.linspace(0.0, 1.0, n)
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    line = p0 + s[:, None] * (p1 - p0)
    d = p1 - p0
    norm = np.hypot(*d)
    perp = np.array([-d[1], d[0]]) / norm
    return line + np.sin(np.pi * s)[:, None] * bulge * perp


def base_shapes() -> dict:
    """Static mid-sagittal layout, one (50, 2) polyline per articulator (mm)."""
    return {
        ArticulatorId.ARYTENOID: _arc((96.0, 156.0), (104.0, 160.0), 1.0),
        ArticulatorId.EPIGLOTTIS: _arc((102.0, 128.0), (112.0, 106.0), 2.0),
        ArticulatorId.LOWER_LIP: _arc((150.0, 88.0), (163.0, 97.0), 2.0),
        # ordered top -> bottom: arclength from index 0 runs down the tract
        ArticulatorId.PHARYNGEAL_WALL: _arc((90.0, 60.0), (86.0, 140.0), 1.5),
        ArticulatorId.VELUM_MIDLINE: _arc((94.0, 64.0), (84.0, 80.0), 2.0),
        ArticulatorId.TONGUE: _arc((100.0, 118.0), (142.0, 72.0), 9.0),
        ArticulatorId.UPPER_LIP: _arc((150.0, 84.0), (163.0, 74.0), 2.0),
        ArticulatorId.VOCAL_FOLDS: _arc((92.0, 148.0), (100.0, 150.0), 1.0),
        ArticulatorId.LOWER_INCISOR: _arc((143.0, 80.0), (148.0, 88.0), 1.0),
        ArticulatorId.UPPER_INCISOR: _arc((95.0, 60.0), (150.0, 64.0), 1.5),
    }


def _smooth_pattern(rng: np.random.Generator, n: int = POINTS_PER_CONTOUR) -> np.ndarray:
    """Smooth random curve over point index, RMS amplitude about 1."""
    s = np.linspace(0.0, 1.0, n)
    out = np.zeros(n)
    for k in range(1, 4):
        out += rng.normal() / k * np.sin(np.pi * k * s + rng.uniform(0, 2 * np.pi))
    return out


def motion_basis(rng: np.random.Generator, n_latents: int) -> np.ndarray:
    """(n_latents, 800) map from latents to flattened contour offsets.

    Smooth along each contour, ~1.5 mm scale, plus a small dense jitter so
    every coordinate has nonzero variance (the velum PCA standardization
    requires it).
    """
    basis = np.zeros((n_latents, FLAT_DIM))
    for k in range(n_latents):
        for art in PREDICTED_ARTICULATORS:
            base = int(art) * COORDS_PER_ARTICULATOR
            basis[k, base : base + POINTS_PER_CONTOUR] = 1.5 * _smooth_pattern(rng)
            basis[k, base + POINTS_PER_CONTOUR : base + COORDS_PER_ARTICULATOR] = (
                1.5 * _smooth_pattern(rng))
    basis += 0.05 * rng.normal(size=basis.shape)
    return basis


def latent_trajectory(rng: np.random.Generator, n_frames: int, n_latents: int) -> np.ndarray:
    """(T, K) sums of low-frequency sinusoids, O(1) amplitude."""
    t = np.arange(n_frames) / FRAME_RATE_HZ
    z = np.zeros((n_frames, n_latents))
    for k in range(n_latents):
        for i in range(1, 4):
            amp = rng.uniform(0.35, 0.7) / i
            freq = rng.uniform(0.8, 2.5)
            phase = rng.uniform(0, 2 * np.pi)
            z[:, k] += amp * np.sin(2 * np.pi * freq * t + phase)
    return z


def phone_timeline(rng: np.random.Generator, n_frames: int) -> list:
    """Random phone segmentation with leading/trailing silences; all
    boundaries rounded to 1e-6 s so the TSV round trip is exact."""
    dur = round(n_frames / FRAME_RATE_HZ, 6)
    segs = []
    t = round(float(rng.uniform(0.3, 0.5)), 6)
    segs.append(PhoneSegment("sil", 0.0, t))
    while t < dur - 0.8:
        if rng.random() < 0.15:
            label, length = "sp", float(rng.uniform(0.1, 0.2))
        else:
            label = str(rng.choice(PHONE_SET))
            length = float(rng.uniform(0.2, 0.6))
        end = round(t + length, 6)
        segs.append(PhoneSegment(label, t, end))
        t = end
    segs.append(PhoneSegment("sil", t, dur))
    return segs


def render_audio(z: np.ndarray, phones: list, carriers: np.ndarray,
                 rng: np.random.Generator, gain: float = 0.5) -> np.ndarray:
    """Sinusoidal carriers with per-frame log-amplitudes gain*z, plus a tiny
    noise floor; silence segments attenuated by 100x."""
    n_frames, n_latents = z.shape
    n = n_frames * SAMPLES_PER_FRAME
    tau = np.arange(n) / AUDIO_RATE_HZ
    frame_of = np.minimum((tau * FRAME_RATE_HZ).astype(int), n_frames - 1)
    audio = np.zeros(n)
    for k in range(n_latents):
        amp = np.exp(gain * z[frame_of, k])
        audio += amp * np.sin(2 * np.pi * carriers[k] * tau)
    audio *= 0.02
    audio += 1e-4 * rng.standard_normal(n)
    attenuation = np.ones(n)
    for seg in phones:
        if seg.label in ("sil", "sp", ""):
            attenuation[(tau >= seg.start_s) & (tau < seg.end_s)] = 0.01
    return np.clip(audio * attenuation, -1.0, 1.0)


def generate_corpus(cfg: SynthConfig, out_dir) -> Path:
    """Write a complete synthetic corpus; returns the manifest path."""
    out = Path(out_dir)
    for sub in ("audio", "contours", "phones") + (("embeddings",) if cfg.with_embeddings else ()):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(10,)))

    shapes = base_shapes()
    basis = motion_basis(rng, cfg.n_latents)
    carriers = np.linspace(500.0, 3400.0, cfg.n_latents)
    emb_map = None
    emb_bias = None
    if cfg.with_embeddings:
        emb_map = rng.normal(size=(cfg.n_latents, cfg.embedding_dim)) / np.sqrt(cfg.n_latents)
        emb_bias = 0.1 * rng.normal(size=cfg.embedding_dim)

    entries = []
    for i in range(cfg.n_acquisitions):
        acq_id = f"acq{i:03d}"
        z = latent_trajectory(rng, cfg.frames_per_acq, cfg.n_latents)
        phones = phone_timeline(rng, cfg.frames_per_acq)
        offsets = z @ basis  # (T, 800)

        frames = []
        for t in range(cfg.frames_per_acq):
            contours = {}
            for art, shape in shapes.items():
                pts = shape.copy()
                if art in PREDICTED_ARTICULATORS:
                    base = int(art) * COORDS_PER_ARTICULATOR
                    pts[:, 0] += offsets[t, base : base + POINTS_PER_CONTOUR]
                    pts[:, 1] += offsets[t, base + POINTS_PER_CONTOUR :
                                         base + COORDS_PER_ARTICULATOR]
                contours[art] = Contour(pts)
            frames.append(ContourFrame(frame_index=t, contours=contours))

        audio = render_audio(z, phones, carriers, rng)
        acq = Acquisition(id=acq_id, session_id=cfg.session_id, frames=frames,
                          audio=audio, phones=phones)
        acq.validate()

        fileio.write_wav_mono16k(out / "audio" / f"{acq_id}.wav", audio)
        fileio.write_contours(out / "contours" / f"{acq_id}.json", acq, cfg.pixel_mm)
        fileio.write_phone_labels(out / "phones" / f"{acq_id}.tsv", phones)
        entry = {
            "id": acq_id,
            "wav": f"audio/{acq_id}.wav",
            "contours": f"contours/{acq_id}.json",
            "phones": f"phones/{acq_id}.tsv",
            "n_frames": cfg.frames_per_acq,
        }
        if cfg.with_embeddings:
            emb = z @ emb_map + emb_bias + 1e-3 * rng.standard_normal(
                (cfg.frames_per_acq, cfg.embedding_dim))
            fileio.write_feature_file(out / "embeddings" / f"{acq_id}.vtaf",
                                      emb, FRAME_RATE_HZ)
            entry["embeddings"] = f"embeddings/{acq_id}.vtaf"
        entries.append(entry)

    manifest = {
        "schema": "CorpusV1",
        "session_id": cfg.session_id,
        "pixel_mm": cfg.pixel_mm,
        "seed": cfg.seed,
        "acquisitions": entries,
    }
    path = out / "corpus.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path

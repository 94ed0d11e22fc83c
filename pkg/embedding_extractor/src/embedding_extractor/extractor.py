"""HuBERT embedding extraction to FeatureFile.

Loads a pretrained model once, then batches over wav files
independently; one file's output never depends on another. Inference is
run in eval mode under no_grad, so reruns are byte-identical.
"""

from dataclasses import dataclass, field
from pathlib import Path
import wave

import numpy as np

from .featurefile import write_feature_file

EXPECTED_RATE = 16_000
OUTPUT_RATE_HZ = 50.0
EXPECTED_DIM = 768

DEFAULT_MODEL = "facebook/hubert-base-ls960"


@dataclass
class ExtractorConfig:
    wav_paths: list = field(default_factory=list)
    out_dir: str = "embeddings"
    model_id: str = DEFAULT_MODEL   # mHuBERT etc. work via the same flag
    layer: int | None = None        # None = final hidden layer


def read_wav_mono16k(path) -> np.ndarray:
    """16-bit PCM mono at 16 kHz, scaled to [-1, 1]."""
    with wave.open(str(path), "rb") as w:
        if w.getframerate() != EXPECTED_RATE:
            raise ValueError(
                f"{path}: sample rate {w.getframerate()} Hz, need {EXPECTED_RATE}")
        if w.getnchannels() != 1:
            raise ValueError(f"{path}: {w.getnchannels()} channels, need mono")
        if w.getsampwidth() != 2:
            raise ValueError(f"{path}: {8 * w.getsampwidth()}-bit, need 16-bit PCM")
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def load_model(model_id: str):
    import torch
    from transformers import HubertModel

    try:
        model = HubertModel.from_pretrained(model_id)
    except Exception as e:
        raise RuntimeError(f"could not load model {model_id!r}: {e}") from e
    model.eval()
    torch.set_grad_enabled(False)
    return model


def embed(model, audio: np.ndarray, layer: int | None) -> np.ndarray:
    import torch

    x = torch.from_numpy(audio).to(torch.float32).unsqueeze(0)
    out = model(x, output_hidden_states=True)
    hidden = out.hidden_states  # [conv output, layer 1, ..., layer L]
    n_layers = len(hidden) - 1
    idx = n_layers if layer is None else layer
    if not 0 <= idx <= n_layers:
        raise ValueError(f"layer {layer} out of range 0..{n_layers}")
    emb = hidden[idx][0].numpy()
    if emb.shape[1] != EXPECTED_DIM:
        raise RuntimeError(
            f"model emits {emb.shape[1]}-dim states, expected {EXPECTED_DIM}")
    return emb


def extract_embeddings(cfg: ExtractorConfig) -> list:
    """One FeatureFile per wav; returns the written paths."""
    if not cfg.wav_paths:
        raise ValueError("no wav files to process")
    model = load_model(cfg.model_id)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for wav in sorted(Path(p) for p in cfg.wav_paths):
        audio = read_wav_mono16k(wav)
        emb = embed(model, audio, cfg.layer)
        out = out_dir / (wav.stem + ".vtaf")
        write_feature_file(out, emb, OUTPUT_RATE_HZ)
        written.append(out)
    return written

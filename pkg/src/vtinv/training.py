"""Training loop: Adam, mini-batches of whole utterances, early stopping,
bit-exact checkpoint/resume.

Randomness policy: every stream is derived from the run seed through
``np.random.SeedSequence(seed, spawn_key=...)``.  Weight init uses spawn
key ``(0,)``; the epoch-``e`` shuffle uses ``(1, e)``.  Resuming from a
checkpoint therefore replays the exact same batch order the
uninterrupted run would have used.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import network
from .errors import (BadMagicError, DivergenceError, StructuralError,
                     TruncatedFileError)
from .network import BiLstmModel

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"VTCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 10
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    early_stop_patience: int = 10
    seed: int = 0
    dense_units: int = 300
    lstm_units: int = 300
    clip_norm: float | None = None  # clip-by-global-norm; None = no clipping

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass
class Sample:
    """One utterance: features (T, F) and flattened contour targets (T, D)."""

    id: str
    x: np.ndarray
    y: np.ndarray

    def check(self, input_dim: int, output_dim: int) -> None:
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise StructuralError(f"sample {self.id}: x and y must be 2-D")
        if self.x.shape[0] != self.y.shape[0]:
            raise StructuralError(
                f"sample {self.id}: {self.x.shape[0]} feature frames vs "
                f"{self.y.shape[0]} target frames")
        if self.x.shape[1] != input_dim:
            raise StructuralError(
                f"sample {self.id}: feature dim {self.x.shape[1]} != {input_dim}")
        if self.y.shape[1] != output_dim:
            raise StructuralError(
                f"sample {self.id}: target dim {self.y.shape[1]} != {output_dim}")


class AdamState:
    def __init__(self, params: dict):
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, cfg: TrainConfig) -> None:
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * (g * g)
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def rng_for_init(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))


def rng_for_epoch(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, epoch)))


def build_model(input_dim: int, cfg: TrainConfig, output_dim: int = 800) -> BiLstmModel:
    return BiLstmModel.initialized(
        input_dim, cfg.dense_units, cfg.lstm_units, output_dim,
        rng=rng_for_init(cfg.seed))


class Trainer:
    """Owns the model, the Adam state, and the early-stopping bookkeeping.

    ``run()`` trains until the epoch budget or the patience counter is
    exhausted.  ``save()``/``load()`` round-trip every array and counter,
    so a run interrupted at any epoch boundary and resumed from disk
    produces bit-identical parameters and history.
    """

    def __init__(self, model: BiLstmModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.adam = AdamState(model.parameters())
        self.epoch = 0  # completed epochs
        self.best_epoch = -1
        self.best_val_loss = np.inf
        self.epochs_since_improve = 0
        self.best_params = {k: v.copy() for k, v in model.parameters().items()}
        self.history: list[dict] = []
        self.stopped_early = False

    # -- the loop ---------------------------------------------------------

    def run(self, train_set: list[Sample], val_set: list[Sample] | None,
            max_new_epochs: int | None = None) -> None:
        if not train_set:
            raise StructuralError("training set is empty")
        # canonical id order: results must not depend on caller's list order
        train_set = sorted(train_set, key=lambda s: s.id)
        val_set = sorted(val_set, key=lambda s: s.id) if val_set else None
        for s in train_set + list(val_set or []):
            s.check(self.model.input_dim, self.model.output_dim)
        budget = self.cfg.epochs - self.epoch
        if max_new_epochs is not None:
            budget = min(budget, max_new_epochs)
        for _ in range(budget):
            if self.stopped_early:
                break
            self._run_epoch(train_set, val_set)

    def _run_epoch(self, train_set: list[Sample],
                   val_set: list[Sample] | None) -> None:
        epoch = self.epoch
        order = rng_for_epoch(self.cfg.seed, epoch).permutation(len(train_set))
        params = self.model.parameters()
        loss_sum = 0.0
        n_seen = 0
        for start in range(0, len(order), self.cfg.batch_size):
            idx = order[start : start + self.cfg.batch_size]
            # accumulation order fixed (sorted by utterance id) within a batch
            batch = sorted((train_set[j] for j in idx), key=lambda s: s.id)
            grad_sum = None
            for s in batch:
                loss, grads, _ = network.backward(self.model, s.x, s.y)
                if not np.isfinite(loss):
                    raise DivergenceError(
                        f"training loss diverged at epoch {epoch} ({s.id})")
                loss_sum += loss
                if grad_sum is None:
                    grad_sum = grads
                else:
                    for k in grad_sum:
                        grad_sum[k] += grads[k]
            n_seen += len(batch)
            for k in grad_sum:
                grad_sum[k] /= len(batch)
            if self.cfg.clip_norm is not None:
                gnorm = np.sqrt(sum(float(np.sum(g * g))
                                    for g in grad_sum.values()))
                if gnorm > self.cfg.clip_norm:
                    scale = self.cfg.clip_norm / gnorm
                    for k in grad_sum:
                        grad_sum[k] *= scale
            self.adam.step(params, grad_sum, self.cfg)
        train_loss = loss_sum / n_seen
        if not np.isfinite(train_loss):
            raise DivergenceError(f"training loss diverged at epoch {epoch}")

        val_loss = None
        if val_set:
            val_loss = self._val_loss(val_set)
            if not np.isfinite(val_loss):
                raise DivergenceError(f"validation loss diverged at epoch {epoch}")

        self.epoch = epoch + 1
        self.history.append({"epoch": epoch, "train_loss": train_loss,
                             "val_loss": val_loss})
        log.info("epoch %d: train %.6f val %s", epoch, train_loss,
                 "n/a" if val_loss is None else f"{val_loss:.6f}")

        monitored = train_loss if val_loss is None else val_loss
        if monitored < self.best_val_loss:
            self.best_val_loss = monitored
            self.best_epoch = epoch
            self.epochs_since_improve = 0
            self.best_params = {k: v.copy() for k, v in params.items()}
        else:
            self.epochs_since_improve += 1
            if self.epochs_since_improve >= self.cfg.early_stop_patience:
                self.stopped_early = True
                log.info("early stop after epoch %d (best %d)", epoch,
                         self.best_epoch)

    def _val_loss(self, val_set: list[Sample]) -> float:
        return float(np.mean(
            [network.mse_loss(network.forward(self.model, s.x), s.y)
             for s in val_set]))

    def best_model(self) -> BiLstmModel:
        m = BiLstmModel(self.model.input_dim, self.model.dense_units,
                        self.model.lstm_units, self.model.output_dim)
        m.set_parameters(self.best_params)
        return m

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        tensors = {}
        for k, v in self.model.parameters().items():
            tensors["param." + k] = v
        for k, v in self.adam.m.items():
            tensors["adam_m." + k] = v
        for k, v in self.adam.v.items():
            tensors["adam_v." + k] = v
        for k, v in self.best_params.items():
            tensors["best." + k] = v
        hist_train = np.array([h["train_loss"] for h in self.history], dtype=np.float64)
        hist_val = np.array(
            [np.nan if h["val_loss"] is None else h["val_loss"] for h in self.history],
            dtype=np.float64)
        tensors["history.train"] = hist_train
        tensors["history.val"] = hist_val
        meta = {
            "config": asdict(self.cfg),
            "config_hash": self.cfg.config_hash(),
            "input_dim": self.model.input_dim,
            "dense_units": self.model.dense_units,
            "lstm_units": self.model.lstm_units,
            "output_dim": self.model.output_dim,
            "epoch": self.epoch,
            "adam_t": self.adam.t,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "epochs_since_improve": self.epochs_since_improve,
            "stopped_early": self.stopped_early,
        }
        with open(path, "wb") as fh:
            _write_checkpoint(fh, meta, tensors)

    @classmethod
    def load(cls, path) -> "Trainer":
        with open(path, "rb") as fh:
            meta, tensors = _read_checkpoint(fh)
        cfg = TrainConfig(**meta["config"])
        model = BiLstmModel(meta["input_dim"], meta["dense_units"],
                            meta["lstm_units"], meta["output_dim"])
        trainer = cls(model, cfg)
        params = model.parameters()
        for k in params:
            params[k][:] = tensors["param." + k]
            trainer.adam.m[k][:] = tensors["adam_m." + k]
            trainer.adam.v[k][:] = tensors["adam_v." + k]
            trainer.best_params[k] = tensors["best." + k].copy()
        trainer.adam.t = meta["adam_t"]
        trainer.epoch = meta["epoch"]
        trainer.best_epoch = meta["best_epoch"]
        trainer.best_val_loss = meta["best_val_loss"]
        trainer.epochs_since_improve = meta["epochs_since_improve"]
        trainer.stopped_early = meta["stopped_early"]
        ht, hv = tensors["history.train"], tensors["history.val"]
        trainer.history = [
            {"epoch": e, "train_loss": float(ht[e]),
             "val_loss": None if np.isnan(hv[e]) else float(hv[e])}
            for e in range(len(ht))
        ]
        return trainer


def load_model(path) -> BiLstmModel:
    """Read just the best-so-far model out of a checkpoint."""
    return Trainer.load(path).best_model()


# -- checkpoint wire format -------------------------------------------------
# magic "VTCK" | u16 version | u32 meta_len | meta JSON (utf-8)
# | u32 n_tensors | per tensor: u16 name_len, name, u8 ndim, u32 dims...,
#   float64 little-endian payload.


def _write_checkpoint(fh, meta: dict, tensors: dict) -> None:
    blob = json.dumps(meta, sort_keys=True).encode()
    fh.write(CHECKPOINT_MAGIC)
    fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(blob)))
    fh.write(blob)
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        nb = name.encode()
        fh.write(struct.pack("<H", len(nb)))
        fh.write(nb)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f8", copy=False).tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"checkpoint truncated: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_checkpoint(fh):
    magic = fh.read(4)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"bad checkpoint magic {magic!r}")
    version, meta_len = struct.unpack("<HI", _read_exact(fh, 6))
    if version != CHECKPOINT_VERSION:
        raise StructuralError(f"unsupported checkpoint version {version}")
    meta = json.loads(_read_exact(fh, meta_len).decode())
    (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4))
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, name_len).decode()
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
        shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8")
        tensors[name] = data.reshape(shape).astype(np.float64)
    return meta, tensors


def checkpoint_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

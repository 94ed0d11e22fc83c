"""Bi-LSTM sequence regressor with hand-written forward and backward passes.

Architecture: input -> dense(tanh) -> dense(tanh) -> BiLSTM -> BiLSTM ->
linear output.  Both dense layers and each LSTM direction have the same
hidden width (300 in the reference configuration); the two directions of
each BiLSTM layer are concatenated, so the output layer sees 2*H
features per frame.

LSTM cell, gate order [i, f, g, o]:

    z_t = x_t W + h_{t-1} U + b
    i, f, o = sigmoid of their slices;  g = tanh(z[2H:3H])
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)

The backward pass is exact backpropagation through time with no
truncation; gradients are averaged the same way the loss is (mean over
frames, coordinate sums scaled by 1/100 per articulator).
"""

from __future__ import annotations

import numpy as np

from .errors import StructuralError

COORDS_PER_ARTICULATOR = 100


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class LstmParams:
    """One direction of one LSTM layer."""

    def __init__(self, input_dim: int, hidden: int):
        self.W = np.zeros((input_dim, 4 * hidden))
        self.U = np.zeros((hidden, 4 * hidden))
        self.b = np.zeros(4 * hidden)
        self.hidden = hidden

    def init_params(self, rng: np.random.Generator):
        d, h = self.W.shape[0], self.hidden
        self.W[:] = rng.uniform(-1.0, 1.0, self.W.shape) * np.sqrt(1.0 / d)
        self.U[:] = rng.uniform(-1.0, 1.0, self.U.shape) * np.sqrt(1.0 / h)
        self.b[:] = 0.0
        self.b[h : 2 * h] = 1.0  # forget gate open at init


class BiLstmModel:
    """dense -> dense -> BiLSTM -> BiLSTM -> linear, all float64."""

    def __init__(self, input_dim: int, dense_units: int = 300, lstm_units: int = 300,
                 output_dim: int = 800):
        self.input_dim = input_dim
        self.dense_units = dense_units
        self.lstm_units = lstm_units
        self.output_dim = output_dim
        d, h = dense_units, lstm_units
        self.dense1_W = np.zeros((input_dim, d))
        self.dense1_b = np.zeros(d)
        self.dense2_W = np.zeros((d, d))
        self.dense2_b = np.zeros(d)
        self.lstm1_fwd = LstmParams(d, h)
        self.lstm1_bwd = LstmParams(d, h)
        self.lstm2_fwd = LstmParams(2 * h, h)
        self.lstm2_bwd = LstmParams(2 * h, h)
        self.out_W = np.zeros((2 * h, output_dim))
        self.out_b = np.zeros(output_dim)

    @classmethod
    def initialized(cls, input_dim: int, dense_units: int = 300, lstm_units: int = 300,
                    output_dim: int = 800, rng: np.random.Generator | None = None):
        """Uniform +-sqrt(1/fan_in) weights, zero biases, forget bias +1."""
        if rng is None:
            rng = np.random.default_rng(0)
        m = cls(input_dim, dense_units, lstm_units, output_dim)
        m.dense1_W[:] = rng.uniform(-1, 1, m.dense1_W.shape) * np.sqrt(1.0 / input_dim)
        m.dense2_W[:] = rng.uniform(-1, 1, m.dense2_W.shape) * np.sqrt(1.0 / dense_units)
        for cell in (m.lstm1_fwd, m.lstm1_bwd, m.lstm2_fwd, m.lstm2_bwd):
            cell.init_params(rng)
        m.out_W[:] = rng.uniform(-1, 1, m.out_W.shape) * np.sqrt(1.0 / (2 * lstm_units))
        return m

    def parameters(self) -> dict:
        """Live name -> array mapping; order is the checkpoint order."""
        params = {
            "dense1.W": self.dense1_W, "dense1.b": self.dense1_b,
            "dense2.W": self.dense2_W, "dense2.b": self.dense2_b,
        }
        for name in ("lstm1_fwd", "lstm1_bwd", "lstm2_fwd", "lstm2_bwd"):
            cell = getattr(self, name)
            params[f"{name}.W"] = cell.W
            params[f"{name}.U"] = cell.U
            params[f"{name}.b"] = cell.b
        params["out.W"] = self.out_W
        params["out.b"] = self.out_b
        return params

    def set_parameters(self, values: dict) -> None:
        for name, arr in self.parameters().items():
            arr[:] = values[name]

    def check_finite(self) -> None:
        for name, arr in self.parameters().items():
            if not np.all(np.isfinite(arr)):
                raise StructuralError(f"parameter {name} contains non-finite values")


def _lstm_forward(p: LstmParams, x: np.ndarray):
    """Scan t = 0..T-1; returns (H outputs (T, h), cache for backward)."""
    t_len = x.shape[0]
    h_dim = p.hidden
    xp = x @ p.W + p.b
    gates = np.empty((t_len, 4 * h_dim))
    cells = np.empty((t_len, h_dim))
    tanh_c = np.empty((t_len, h_dim))
    h_prev = np.empty((t_len, h_dim))
    c_prev = np.empty((t_len, h_dim))
    outputs = np.empty((t_len, h_dim))
    h = np.zeros(h_dim)
    c = np.zeros(h_dim)
    for t in range(t_len):
        h_prev[t] = h
        c_prev[t] = c
        z = xp[t] + h @ p.U
        i = sigmoid(z[:h_dim])
        f = sigmoid(z[h_dim : 2 * h_dim])
        g = np.tanh(z[2 * h_dim : 3 * h_dim])
        o = sigmoid(z[3 * h_dim :])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[t, :h_dim] = i
        gates[t, h_dim : 2 * h_dim] = f
        gates[t, 2 * h_dim : 3 * h_dim] = g
        gates[t, 3 * h_dim :] = o
        cells[t] = c
        tanh_c[t] = tc
        outputs[t] = h
    return outputs, (x, gates, cells, tanh_c, h_prev, c_prev)


def _lstm_backward(p: LstmParams, cache, d_out: np.ndarray):
    """Exact BPTT; returns (d_input, dW, dU, db)."""
    x, gates, _cells, tanh_c, h_prev, c_prev = cache
    t_len, h_dim = d_out.shape
    dW = np.zeros_like(p.W)
    dU = np.zeros_like(p.U)
    db = np.zeros_like(p.b)
    dx = np.empty_like(x)
    dh_next = np.zeros(h_dim)
    dc_next = np.zeros(h_dim)
    dz = np.empty(4 * h_dim)
    for t in range(t_len - 1, -1, -1):
        i = gates[t, :h_dim]
        f = gates[t, h_dim : 2 * h_dim]
        g = gates[t, 2 * h_dim : 3 * h_dim]
        o = gates[t, 3 * h_dim :]
        dh = d_out[t] + dh_next
        dtc = dh * o * (1.0 - tanh_c[t] ** 2) + dc_next
        dz[:h_dim] = (dtc * g) * i * (1.0 - i)
        dz[h_dim : 2 * h_dim] = (dtc * c_prev[t]) * f * (1.0 - f)
        dz[2 * h_dim : 3 * h_dim] = (dtc * i) * (1.0 - g**2)
        dz[3 * h_dim :] = (dh * tanh_c[t]) * o * (1.0 - o)
        dc_next = dtc * f
        dW += np.outer(x[t], dz)
        dU += np.outer(h_prev[t], dz)
        db += dz
        dx[t] = dz @ p.W.T
        dh_next = dz @ p.U.T
    return dx, dW, dU, db


def _bilstm_forward(fwd: LstmParams, bwd: LstmParams, x: np.ndarray):
    h_f, cache_f = _lstm_forward(fwd, x)
    h_b_rev, cache_b = _lstm_forward(bwd, x[::-1])
    out = np.concatenate([h_f, h_b_rev[::-1]], axis=1)
    return out, (cache_f, cache_b)


def _bilstm_backward(fwd: LstmParams, bwd: LstmParams, cache, d_out: np.ndarray):
    cache_f, cache_b = cache
    h_dim = fwd.hidden
    dx_f, dWf, dUf, dbf = _lstm_backward(fwd, cache_f, d_out[:, :h_dim])
    dx_b_rev, dWb, dUb, dbb = _lstm_backward(bwd, cache_b, d_out[::-1, h_dim:])
    return dx_f + dx_b_rev[::-1], (dWf, dUf, dbf), (dWb, dUb, dbb)


def _forward_with_cache(model: BiLstmModel, x: np.ndarray):
    a1 = np.tanh(x @ model.dense1_W + model.dense1_b)
    a2 = np.tanh(a1 @ model.dense2_W + model.dense2_b)
    h1, cache1 = _bilstm_forward(model.lstm1_fwd, model.lstm1_bwd, a2)
    h2, cache2 = _bilstm_forward(model.lstm2_fwd, model.lstm2_bwd, h1)
    y = h2 @ model.out_W + model.out_b
    return y, (x, a1, a2, cache1, cache2, h2)


def forward(model: BiLstmModel, x: np.ndarray) -> np.ndarray:
    """Run one utterance (T, F) through the model; returns (T, output_dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise StructuralError(
            f"input shape {x.shape} does not match model input dim {model.input_dim}"
        )
    if x.shape[0] < 1:
        raise StructuralError("input must contain at least one frame")
    return _forward_with_cache(model, x)[0]


def mse_loss(y_hat: np.ndarray, y: np.ndarray,
             coords_per_articulator: int = COORDS_PER_ARTICULATOR) -> float:
    """Per-frame sum of per-articulator MSEs, averaged over frames.

    With 800 coordinates this is sum(residual^2) / 100 per frame: each
    articulator contributes the mean square over its 100 coordinates and
    the 8 contributions are summed.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise StructuralError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    r = y_hat - y
    return float(np.sum(r * r) / (coords_per_articulator * y.shape[0]))


def backward(model: BiLstmModel, x: np.ndarray, y: np.ndarray):
    """Loss and exact gradients for one utterance.

    Returns (loss, gradients dict keyed like model.parameters(), y_hat).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    y_hat, (x_in, a1, a2, cache1, cache2, h2) = _forward_with_cache(model, x)
    if y_hat.shape != y.shape:
        raise StructuralError(f"target shape {y.shape} vs output {y_hat.shape}")
    t_len = x.shape[0]
    resid = y_hat - y
    loss = float(np.sum(resid * resid) / (COORDS_PER_ARTICULATOR * t_len))

    d_y = (2.0 / (COORDS_PER_ARTICULATOR * t_len)) * resid
    grads = {}
    grads["out.W"] = h2.T @ d_y
    grads["out.b"] = d_y.sum(axis=0)
    d_h2 = d_y @ model.out_W.T

    d_h1, (dWf2, dUf2, dbf2), (dWb2, dUb2, dbb2) = _bilstm_backward(
        model.lstm2_fwd, model.lstm2_bwd, cache2, d_h2)
    grads["lstm2_fwd.W"], grads["lstm2_fwd.U"], grads["lstm2_fwd.b"] = dWf2, dUf2, dbf2
    grads["lstm2_bwd.W"], grads["lstm2_bwd.U"], grads["lstm2_bwd.b"] = dWb2, dUb2, dbb2

    d_a2, (dWf1, dUf1, dbf1), (dWb1, dUb1, dbb1) = _bilstm_backward(
        model.lstm1_fwd, model.lstm1_bwd, cache1, d_h1)
    grads["lstm1_fwd.W"], grads["lstm1_fwd.U"], grads["lstm1_fwd.b"] = dWf1, dUf1, dbf1
    grads["lstm1_bwd.W"], grads["lstm1_bwd.U"], grads["lstm1_bwd.b"] = dWb1, dUb1, dbb1

    d_pre2 = d_a2 * (1.0 - a2**2)
    grads["dense2.W"] = a1.T @ d_pre2
    grads["dense2.b"] = d_pre2.sum(axis=0)
    d_a1 = d_pre2 @ model.dense2_W.T

    d_pre1 = d_a1 * (1.0 - a1**2)
    grads["dense1.W"] = x_in.T @ d_pre1
    grads["dense1.b"] = d_pre1.sum(axis=0)

    return loss, grads, y_hat

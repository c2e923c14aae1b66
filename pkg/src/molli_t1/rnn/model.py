"""LSTM regressor from recovery curves to (A, B, T1*).

A single LSTM layer reads the curve one inversion time at a time, each step
seeing the pair (TI / time_scale, y / max(y)). The last hidden state goes
through an affine head; softplus keeps the three outputs positive. Outputs
live in normalised units: amplitudes relative to the curve maximum and T1*
relative to ``time_scale``.

Forward and backward passes are batched numpy code; gradients are exact
backpropagation through time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from molli_t1.signal_model import ModelParams

TENSOR_ORDER = ("lstm_w", "lstm_b", "head_w", "head_b")
LOSS_MODES = ("terms", "curve")


class DegenerateCurveError(ValueError):
    """Raised for curves whose maximum is not positive."""


@dataclass(frozen=True)
class RnnConfig:
    hidden_units: int = 64
    input_features: int = 2
    output_units: int = 3
    epochs: int = 32
    curves_per_epoch: int = 65535
    batch_size: int = 192
    learning_rate: float = 3e-3
    lr_decay: float = 0.93
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_mode: str = "terms"
    validation_curves: int = 3000
    seed: int = 0

    def __post_init__(self):
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if self.output_units != 3 or self.input_features != 2:
            raise ValueError("the network maps (TI, y) pairs to exactly 3 parameters")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.batch_size % 3 or self.curves_per_epoch % 3:
            raise ValueError("batch_size and curves_per_epoch must be divisible by 3")


@dataclass(frozen=True)
class NormalizationSpec:
    time_scale: float = 5000.0

    def __post_init__(self):
        if self.time_scale <= 0:
            raise ValueError("time_scale must be positive")


@dataclass
class RnnWeights:
    """LSTM gate weights over ``[x; h]`` (gate order i, f, g, o) and the head."""

    lstm_w: np.ndarray  # (F + H, 4H)
    lstm_b: np.ndarray  # (4H,)
    head_w: np.ndarray  # (H, 3)
    head_b: np.ndarray  # (3,)

    @property
    def hidden_units(self) -> int:
        return self.head_w.shape[0]

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in TENSOR_ORDER}

    def copy(self) -> "RnnWeights":
        return RnnWeights(**{k: v.copy() for k, v in self.tensors().items()})

    @classmethod
    def zeros(cls, hidden: int, features: int = 2) -> "RnnWeights":
        return cls(
            np.zeros((features + hidden, 4 * hidden)), np.zeros(4 * hidden),
            np.zeros((hidden, 3)), np.zeros(3),
        )

    @classmethod
    def init(cls, config: RnnConfig, rng: np.random.Generator) -> "RnnWeights":
        h, f = config.hidden_units, config.input_features
        lim = 1.0 / np.sqrt(f + h)
        lstm_w = rng.uniform(-lim, lim, size=(f + h, 4 * h))
        lstm_b = np.zeros(4 * h)
        lstm_b[h:2 * h] = 1.0
        lim = 1.0 / np.sqrt(h)
        head_w = rng.uniform(-lim, lim, size=(h, 3))
        return cls(lstm_w, lstm_b, head_w, np.zeros(3))

    def check(self):
        h = self.hidden_units
        f = self.lstm_w.shape[0] - h
        shapes = {"lstm_w": (f + h, 4 * h), "lstm_b": (4 * h,), "head_w": (h, 3), "head_b": (3,)}
        for name, shape in shapes.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softplus(z):
    return np.logaddexp(0.0, z)


def softplus_grad(z):
    return sigmoid(z)


def encode(times, values, norm: NormalizationSpec):
    """Network input ``(N, T, 2)`` and per-curve maxima for sorted curves."""
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    ymax = np.max(y, axis=1)
    if np.any(~(ymax > 0)):
        raise DegenerateCurveError("curve maximum must be positive")
    x = np.stack([t / norm.time_scale, y / ymax[:, None]], axis=-1)
    return x, ymax


@dataclass
class Cache:
    x: np.ndarray
    xh: list = field(default_factory=list)
    gates: list = field(default_factory=list)
    c: list = field(default_factory=list)
    h: list = field(default_factory=list)
    z: np.ndarray | None = None


def forward_raw(w: RnnWeights, x):
    """Run the LSTM + head; returns pre-softplus outputs ``(N, 3)`` and the cache."""
    n, steps, feats = x.shape
    hdim = w.hidden_units
    h = np.zeros((n, hdim))
    c = np.zeros((n, hdim))
    cache = Cache(x, c=[c], h=[h])
    for k in range(steps):
        xh = np.concatenate([x[:, k, :], h], axis=1)
        a = xh @ w.lstm_w + w.lstm_b
        i = sigmoid(a[:, :hdim])
        f = sigmoid(a[:, hdim:2 * hdim])
        g = np.tanh(a[:, 2 * hdim:3 * hdim])
        o = sigmoid(a[:, 3 * hdim:])
        c = f * c + i * g
        h = o * np.tanh(c)
        cache.xh.append(xh)
        cache.gates.append((i, f, g, o))
        cache.c.append(c)
        cache.h.append(h)
    z = h @ w.head_w + w.head_b
    cache.z = z
    return z, cache


def backward_raw(w: RnnWeights, cache: Cache, dz) -> RnnWeights:
    """Backpropagation through time from the head-output gradient ``dz``."""
    hdim = w.hidden_units
    hT = cache.h[-1]
    grads = RnnWeights(np.zeros_like(w.lstm_w), np.zeros_like(w.lstm_b), hT.T @ dz, dz.sum(axis=0))
    dh = dz @ w.head_w.T
    dc = np.zeros_like(dh)
    w_h = w.lstm_w[-hdim:]
    for k in reversed(range(len(cache.xh))):
        i, f, g, o = cache.gates[k]
        c, c_prev = cache.c[k + 1], cache.c[k]
        tc = np.tanh(c)
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc = dc * f
        da = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        grads.lstm_w += cache.xh[k].T @ da
        grads.lstm_b += da.sum(axis=0)
        dh = da @ w_h.T
    return grads


def predict_normalized(w: RnnWeights, times, values, norm: NormalizationSpec):
    """Normalised ``(a_n, b_n, t1s_n)`` rows and the curve maxima."""
    x, ymax = encode(times, values, norm)
    z, _ = forward_raw(w, x)
    return softplus(z), ymax


def decode(q, ymax, norm: NormalizationSpec):
    return np.stack([q[:, 0] * ymax, q[:, 1] * ymax, q[:, 2] * norm.time_scale], axis=1)


def predict(w: RnnWeights, times, values, norm: NormalizationSpec = NormalizationSpec(), chunk: int = 8192):
    """Physical ``(a, b, t1_star)`` rows for a batch of sorted curves."""
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    out = np.empty((y.shape[0], 3))
    for s in range(0, y.shape[0], chunk):
        q, ymax = predict_normalized(w, t[s:s + chunk], y[s:s + chunk], norm)
        out[s:s + chunk] = decode(q, ymax, norm)
    return out


def forward(w: RnnWeights, curve, norm: NormalizationSpec = NormalizationSpec()) -> ModelParams:
    """Predict the parameters of a single :class:`SignalCurve`."""
    return ModelParams.from_array(predict(w, curve.times[None], curve.values[None], norm)[0])


def normalize_truth(params, ymax, norm: NormalizationSpec):
    p = np.asarray(params, dtype=np.float64)
    return np.stack([p[:, 0] / ymax, p[:, 1] / ymax, p[:, 2] / norm.time_scale], axis=1)

"""Training, gradient checking and map inference for the LSTM regressor."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from molli_t1.rng import substream
from molli_t1.rnn import loss as L
from molli_t1.rnn import model as M
from molli_t1.rnn.model import NormalizationSpec, RnnConfig, RnnWeights
from molli_t1.signal_model import apparent_to_true_t1
from molli_t1.synthdata.curves import (
    Acquisition,
    CurveBatch,
    ParamRanges,
    Perturbation,
    PerturbationClass,
    gen_batch_arrays,
)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


def loss_and_grad(w: RnnWeights, times, values, params, norm: NormalizationSpec, mode: str = "terms"):
    """Batch-mean loss, per-sample losses and weight gradients."""
    x, ymax = M.encode(times, values, norm)
    z, cache = M.forward_raw(w, x)
    q = M.softplus(z)
    truth = M.normalize_truth(params, ymax, norm)
    tn = np.asarray(times, dtype=np.float64) / norm.time_scale
    per = L.per_sample_loss(q, truth, tn, mode)
    dq = L.loss_grad(q, truth, tn, mode)
    dz = dq * M.softplus_grad(z)
    return float(np.mean(per)), per, M.backward_raw(w, cache, dz)


def batch_loss(w: RnnWeights, times, values, params, norm: NormalizationSpec, mode: str = "terms") -> float:
    x, ymax = M.encode(times, values, norm)
    z, _ = M.forward_raw(w, x)
    truth = M.normalize_truth(params, ymax, norm)
    return float(np.mean(L.per_sample_loss(M.softplus(z), truth, np.asarray(times) / norm.time_scale, mode)))


def _kinks(w, times, values, params, norm, mode):
    x, ymax = M.encode(times, values, norm)
    z, _ = M.forward_raw(w, x)
    truth = M.normalize_truth(params, ymax, norm)
    return L.kink_signature(M.softplus(z), truth, np.asarray(times) / norm.time_scale, mode)


def grad_check(
    config: RnnConfig,
    rng: np.random.Generator,
    n_samples: int = 25,
    step: float = 1e-6,
    norm: NormalizationSpec = NormalizationSpec(),
    weights: Optional[RnnWeights] = None,
) -> float:
    """Worst per-tensor relative error between BPTT gradients and central differences.

    Every weight coordinate is perturbed by ``+-step``; coordinates whose
    perturbation flips the sign of any absolute-value argument (a kink
    crossing) are left out. For each tensor the error is
    ``||g - g_fd|| / max(||g||, ||g_fd||)`` over the remaining coordinates.
    """
    n_gen = n_samples + (-n_samples) % 3
    batch = gen_batch_arrays(n_gen, rng, acq=Acquisition())
    t, y, p = batch.times[:n_samples], batch.values[:n_samples], batch.params[:n_samples]
    w = RnnWeights.init(config, rng) if weights is None else weights.copy()
    if step == 0:
        return 0.0
    mode = config.loss_mode
    _, _, grads = loss_and_grad(w, t, y, p, norm, mode)
    sig0 = _kinks(w, t, y, p, norm, mode)
    worst = 0.0
    for name in M.TENSOR_ORDER:
        flat = getattr(w, name).reshape(-1)
        g = getattr(grads, name).reshape(-1)
        kept, fds = [], []
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            lp = batch_loss(w, t, y, p, norm, mode)
            sp = _kinks(w, t, y, p, norm, mode)
            flat[j] = orig - step
            lm = batch_loss(w, t, y, p, norm, mode)
            sm = _kinks(w, t, y, p, norm, mode)
            flat[j] = orig
            if np.array_equal(sp, sig0) and np.array_equal(sm, sig0):
                kept.append(j)
                fds.append((lp - lm) / (2 * step))
        if not kept:
            continue
        ga, fd = g[kept], np.array(fds)
        scale = max(np.linalg.norm(ga), np.linalg.norm(fd))
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(ga - fd) / scale))
    return worst


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, w: RnnWeights, grads: RnnWeights, lr: float):
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for name in M.TENSOR_ORDER:
            g = getattr(grads, name)
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            getattr(w, name)[...] -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


@dataclass
class CurveSource:
    """Fresh balanced batches, one deterministic stream per epoch."""

    seed: int = 0
    ranges: ParamRanges = ParamRanges()
    acq: Acquisition = Acquisition()
    pert: Perturbation = Perturbation()

    def epoch(self, epoch: int, n: int) -> CurveBatch:
        return gen_batch_arrays(n, substream(self.seed, "curves", epoch), self.ranges, self.acq, self.pert)

    def validation(self, n: int) -> CurveBatch:
        return gen_batch_arrays(
            n, substream(self.seed, "validation"), self.ranges, self.acq, self.pert,
            classes=[PerturbationClass.IDEAL],
        )


def relative_t1_error(w: RnnWeights, batch: CurveBatch, norm: NormalizationSpec) -> np.ndarray:
    pred = M.predict(w, batch.times, batch.values, norm)
    t1_true = apparent_to_true_t1(batch.params)
    return np.abs(apparent_to_true_t1(pred) - t1_true) / np.abs(t1_true)


@dataclass
class TrainState:
    weights: RnnWeights
    optimizer: Adam
    epoch: int = 0
    history: list = field(default_factory=list)


def init_state(config: RnnConfig) -> TrainState:
    w = RnnWeights.init(config, substream(config.seed, "weights"))
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    return TrainState(w, opt)


def train(
    config: RnnConfig,
    norm: NormalizationSpec = NormalizationSpec(),
    source: Optional[CurveSource] = None,
    state: Optional[TrainState] = None,
    on_epoch: Optional[Callable[[TrainState], None]] = None,
) -> TrainState:
    """Train (or resume training) up to ``config.epochs`` epochs.

    Epoch ``e`` always sees the curves of stream ``("curves", e)`` and the
    learning rate ``learning_rate * lr_decay**e``, so a resumed run matches an
    uninterrupted one. History rows are ``(epoch, loss, validation T1 error)``.
    """
    source = CurveSource(seed=config.seed) if source is None else source
    state = init_state(config) if state is None else state
    val = source.validation(config.validation_curves) if config.validation_curves else None
    w, opt = state.weights, state.optimizer
    for epoch in range(state.epoch, config.epochs):
        data = source.epoch(epoch, config.curves_per_epoch)
        lr = config.learning_rate * config.lr_decay**epoch
        total = 0.0
        for s in range(0, len(data), config.batch_size):
            sl = slice(s, s + config.batch_size)
            loss, per, grads = loss_and_grad(w, data.times[sl], data.values[sl], data.params[sl], norm, config.loss_mode)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch + 1}")
            opt.update(w, grads, lr)
            total += float(np.sum(per))
        epoch_loss = total / len(data)
        val_err = float(np.mean(relative_t1_error(w, val, norm))) if val is not None else float("nan")
        state.epoch = epoch + 1
        state.history.append((state.epoch, epoch_loss, val_err))
        log.info("epoch %d loss %.6g val T1 err %.4f", state.epoch, epoch_loss, val_err)
        if on_epoch is not None:
            on_epoch(state)
    return state


@dataclass
class RnnMaps:
    a: np.ndarray
    b: np.ndarray
    t1_star: np.ndarray
    t1: np.ndarray
    valid: np.ndarray

    def planes(self) -> dict:
        return {"t1": self.t1, "a": self.a, "b": self.b, "t1_star": self.t1_star, "valid": self.valid.astype(np.float32)}


def infer_map(w: RnnWeights, stack, norm: NormalizationSpec = NormalizationSpec(), mask=None) -> RnnMaps:
    """Per-pixel prediction over ``stack``; all-zero pixels are marked invalid."""
    from molli_t1.lmfit import default_mask

    shape = stack.shape
    mask = default_mask(stack) if mask is None else np.asarray(mask, dtype=bool)
    curves = stack.curves()
    tis = stack.sorted_tis()
    sel = np.flatnonzero(mask.ravel())
    sel = sel[np.max(curves[sel], axis=1) > 0]
    npx = shape[0] * shape[1]
    params = np.full((npx, 3), np.nan)
    if sel.size:
        params[sel] = M.predict(w, np.broadcast_to(tis, (sel.size, tis.size)), curves[sel], norm)
    t1 = apparent_to_true_t1(params)
    valid = np.zeros(npx, dtype=bool)
    valid[sel] = np.isfinite(t1[sel])
    rs = lambda x: x.reshape(shape)
    return RnnMaps(rs(params[:, 0]), rs(params[:, 1]), rs(params[:, 2]), rs(t1), rs(valid))

"""Levenberg-Marquardt fitting of the MOLLI model with polarity restoration.

The solver is written for batches: every curve carries its own damping,
iteration count and stopping state, and all reductions over samples are
explicit per-row sums, so a curve's result never depends on which other
curves share its batch. Single-curve entry points are thin wrappers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from molli_t1.signal_model import ModelParams, SignalCurve, apparent_to_true_t1

log = logging.getLogger(__name__)

MAX_HALVINGS = 60
MAX_DAMPING = 1e16
MIN_INIT_RATIO = 1.2


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 100
    cost_tolerance: float = 1e-12
    param_tolerance: float = 1e-10
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    polarity_search: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if min(self.cost_tolerance, self.param_tolerance, self.initial_damping) <= 0:
            raise ValueError("tolerances and initial damping must be positive")
        if not self.damping_up > 1 > self.damping_down > 0:
            raise ValueError("need damping_up > 1 > damping_down > 0")


@dataclass
class FitResult:
    params: ModelParams
    t1: float
    residual_norm: float
    polarity_index: int
    iterations: int
    converged: bool
    plausible: bool
    singular: bool = False
    cost_history: Optional[tuple[float, ...]] = field(default=None, repr=False)


@dataclass
class BatchFit:
    """Per-curve arrays of a batched fit."""

    params: np.ndarray
    cost: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    singular: np.ndarray
    polarity_index: np.ndarray
    history: Optional[list] = None

    @property
    def t1(self) -> np.ndarray:
        return apparent_to_true_t1(self.params)

    @property
    def plausible(self) -> np.ndarray:
        t1 = self.t1
        return (
            self.converged
            & np.all(np.isfinite(self.params), axis=1)
            & (self.params[:, 1] >= self.params[:, 0])
            & np.isfinite(t1) & (t1 > 0)
        )

    def result(self, i: int) -> FitResult:
        p = ModelParams.from_array(self.params[i])
        hist = None if self.history is None else tuple(self.history[i])
        return FitResult(
            params=p,
            t1=float(apparent_to_true_t1(p)),
            residual_norm=float(self.cost[i]),
            polarity_index=int(self.polarity_index[i]),
            iterations=int(self.iterations[i]),
            converged=bool(self.converged[i]),
            plausible=bool(self.plausible[i]),
            singular=bool(self.singular[i]),
            cost_history=hist,
        )


def _rowsum(x):
    # fixed left-to-right order over samples; keeps each row independent of the batch
    s = x[:, 0].copy()
    for k in range(1, x.shape[1]):
        s += x[:, k]
    return s


def model(p, t):
    """Signed model for rows of parameters ``p`` (N, 3) at times ``t`` (N, m)."""
    return p[:, 0:1] - p[:, 1:2] * np.exp(-t / p[:, 2:3])


def jacobian(p, t):
    """Analytic Jacobian of :func:`model`, shape ``(N, m, 3)``."""
    a, b, ts = p[:, 0:1], p[:, 1:2], p[:, 2:3]
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(-t / ts)
        return np.stack([np.ones_like(e), -e, -(b * t / ts**2) * e], axis=-1)


def _cost(p, t, y):
    r = y - model(p, t)
    return _rowsum(r * r)


def _solve_damped(J, r, lam):
    """Solve ``(J^T J + lam diag(J^T J)) d = J^T r`` row-wise.

    Columns are scaled to unit diagonal first and the 3x3 system is solved by
    an explicit Cholesky factorisation. Returns ``(d, singular)``.
    """
    n = J.shape[0]
    H = np.empty((n, 3, 3))
    g = np.empty((n, 3))
    for i in range(3):
        g[:, i] = _rowsum(J[:, :, i] * r)
        for j in range(i, 3):
            H[:, i, j] = H[:, j, i] = _rowsum(J[:, :, i] * J[:, :, j])
    d = np.sqrt(np.diagonal(H, axis1=1, axis2=2))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ok = np.all(np.isfinite(d) & (d > 0), axis=1)
        ds = np.where(ok[:, None], d, 1.0)
        S = H / (ds[:, :, None] * ds[:, None, :])
        S[:, [0, 1, 2], [0, 1, 2]] = 1.0 + lam[:, None]
        gs = g / ds
        l11 = np.sqrt(S[:, 0, 0])
        l21 = S[:, 1, 0] / l11
        l31 = S[:, 2, 0] / l11
        r22 = S[:, 1, 1] - l21 * l21
        l22 = np.sqrt(np.where(r22 > 0, r22, 1.0))
        l32 = (S[:, 2, 1] - l31 * l21) / l22
        r33 = S[:, 2, 2] - l31 * l31 - l32 * l32
        l33 = np.sqrt(np.where(r33 > 0, r33, 1.0))
        ok &= (r22 > 1e-15) & (r33 > 1e-15)
        z1 = gs[:, 0] / l11
        z2 = (gs[:, 1] - l21 * z1) / l22
        z3 = (gs[:, 2] - l31 * z1 - l32 * z2) / l33
        x3 = z3 / l33
        x2 = (z2 - l32 * x3) / l22
        x1 = (z1 - l21 * x2 - l31 * x3) / l11
        delta = np.stack([x1, x2, x3], axis=1) / ds
    ok &= np.all(np.isfinite(delta), axis=1)
    return np.where(ok[:, None], delta, 0.0), ~ok


def lm_batch(times, values, init, opts: FitOptions = FitOptions(), record: bool = False) -> BatchFit:
    """Fit the signed model to every row of ``values`` independently."""
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    p = np.array(init, dtype=np.float64, copy=True)
    if y.ndim != 2 or t.shape != y.shape or p.shape != (y.shape[0], 3):
        raise FitError("times/values must be (N, m) and init (N, 3)")
    if y.shape[1] < 4:
        raise FitError(f"need at least 4 samples per curve, got {y.shape[1]}")
    n = y.shape[0]
    cost = _cost(p, t, y)
    lam = np.full(n, opts.initial_damping)
    iters = np.zeros(n, dtype=np.int64)
    converged = cost == 0.0
    singular = np.zeros(n, dtype=bool)
    active = ~converged & np.all(np.isfinite(p), axis=1) & np.isfinite(cost)
    history = [[float(c)] for c in cost] if record else None

    for _ in range(opts.max_iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        pi, ti, yi = p[idx], t[idx], y[idx]
        J = jacobian(pi, ti)
        r = yi - model(pi, ti)
        delta, sing = _solve_damped(J, r, lam[idx])
        iters[idx] += 1

        # keep parameters positive by halving the step
        for _h in range(MAX_HALVINGS):
            bad = np.any(pi + delta <= 0, axis=1)
            if not bad.any():
                break
            delta[bad] *= 0.5
        trial = pi + delta
        still_bad = np.any(trial <= 0, axis=1)
        sing |= still_bad

        with np.errstate(divide="ignore", invalid="ignore"):
            rel_step = np.max(np.abs(delta) / np.maximum(np.abs(pi), 1e-300), axis=1)
        with np.errstate(over="ignore", invalid="ignore"):
            new_cost = np.where(sing, np.inf, _cost(np.where(sing[:, None], pi, trial), ti, yi))
        old_cost = cost[idx]
        accept = ~sing & (new_cost < old_cost)

        acc = idx[accept]
        rel_dec = (old_cost[accept] - new_cost[accept]) / old_cost[accept]
        p[acc] = trial[accept]
        cost[acc] = new_cost[accept]
        lam[acc] *= opts.damping_down
        if record:
            for j, c in zip(acc, new_cost[accept]):
                history[j].append(float(c))
        done_acc = (rel_dec < opts.cost_tolerance) | (new_cost[accept] == 0.0)

        rej = idx[~accept & ~sing]
        lam[rej] *= opts.damping_up

        finished = np.zeros(idx.size, dtype=bool)
        conv_now = np.zeros(idx.size, dtype=bool)
        conv_now[accept] = done_acc
        conv_now |= ~sing & (rel_step < opts.param_tolerance)
        finished |= conv_now | sing
        finished |= lam[idx] > MAX_DAMPING
        converged[idx[conv_now]] = True
        singular[idx[sing]] = True
        active[idx[finished]] = False

    return BatchFit(p, cost, iters, converged & ~singular, singular, np.zeros(n, dtype=np.int64), history)


def init_guess_batch(times, values) -> np.ndarray:
    """Row-wise initial guess from magnitude curves sorted by inversion time."""
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    a0 = np.abs(y[:, -1])
    # first sample near the null would give b0 ~ a0 and a runaway T1* start
    b0 = np.maximum(a0 + np.abs(y[:, 0]), MIN_INIT_RATIO * a0)
    t_null = t[np.arange(t.shape[0]), np.argmin(np.abs(y), axis=1)]
    with np.errstate(divide="ignore", invalid="ignore"):
        ts0 = np.clip(t_null / np.log(b0 / a0), 100.0, 3000.0)
    ts0 = np.where(np.isfinite(ts0), ts0, 3000.0)
    degenerate = ~(np.isfinite(a0) & (a0 > 0) & np.isfinite(b0))
    scale = np.max(np.abs(y), axis=1)
    scale = np.where(np.isfinite(scale) & (scale > 0), scale, 1.0)
    fallback = np.stack([scale, 2 * scale, np.full_like(scale, 1000.0)], axis=1)
    guess = np.stack([a0, b0, ts0], axis=1)
    return np.where(degenerate[:, None], fallback, guess)


def init_guess(curve: SignalCurve) -> ModelParams:
    return ModelParams.from_array(init_guess_batch(curve.times[None], curve.values[None])[0])


def lm_fit_signed(times, signed_values, init: ModelParams, opts: FitOptions = FitOptions(), record: bool = False) -> FitResult:
    """Fit ``a - b exp(-t / t1_star)`` to signed samples of one curve."""
    t = np.asarray(times, dtype=np.float64).ravel()
    y = np.asarray(signed_values, dtype=np.float64).ravel()
    if t.size < 4 or t.size != y.size:
        raise FitError(f"need at least 4 paired samples, got {t.size} times and {y.size} values")
    p0 = init.as_array() if isinstance(init, ModelParams) else np.asarray(init, dtype=np.float64)
    if not np.all(np.isfinite(p0)):
        raise FitError("initial guess must be finite")
    fit = lm_batch(t[None], y[None], p0[None], opts, record=record)
    if fit.singular[0]:
        log.debug("singular normal equations for init %s", p0)
    return fit.result(0)


def fit_curves(times, values, opts: FitOptions = FitOptions()) -> BatchFit:
    """Polarity-restoring fit of magnitude curves (rows sorted by time).

    Hypothesis ``k`` negates the first ``k`` samples; ``k`` runs from 0 to
    ``m - 1`` (negating all samples is the sign mirror of ``k = 0``). The
    hypothesis with the smallest residual wins, ties going to the smaller ``k``.
    """
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    n, m = y.shape
    if m < 4:
        raise FitError(f"need at least 4 samples per curve, got {m}")
    init = init_guess_batch(t, y)
    live = np.any(y > 0, axis=1)
    best = BatchFit(
        init.copy(), _cost(init, t, y), np.zeros(n, dtype=np.int64), np.zeros(n, dtype=bool),
        np.zeros(n, dtype=bool), np.zeros(n, dtype=np.int64),
    )
    best_cost = np.full(n, np.inf)
    idx = np.flatnonzero(live)
    if idx.size == 0:
        return best
    ks = range(m) if opts.polarity_search else range(1)
    total_iters = np.zeros(idx.size, dtype=np.int64)
    for k in ks:
        ys = y[idx].copy()
        ys[:, :k] *= -1.0
        fit = lm_batch(t[idx], ys, init[idx], opts)
        total_iters += fit.iterations
        c = np.where(np.isfinite(fit.cost), fit.cost, np.inf)
        better = c < best_cost[idx]
        sel = idx[better]
        best_cost[sel] = c[better]
        best.params[sel] = fit.params[better]
        best.cost[sel] = fit.cost[better]
        best.converged[sel] = fit.converged[better]
        best.singular[sel] = fit.singular[better]
        best.polarity_index[sel] = k
    best.iterations[idx] = total_iters
    return best


def fit_with_polarity(curve: SignalCurve, opts: FitOptions = FitOptions()) -> FitResult:
    return fit_curves(curve.times[None], curve.values[None], opts).result(0)


@dataclass
class MapFit:
    """Parameter, T1 and diagnostic maps of a stack fit."""

    a: np.ndarray
    b: np.ndarray
    t1_star: np.ndarray
    t1: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    polarity_index: np.ndarray
    valid: np.ndarray

    def planes(self) -> dict:
        return {
            "t1": self.t1, "a": self.a, "b": self.b, "t1_star": self.t1_star,
            "residual": self.residual, "converged": self.converged.astype(np.float32),
            "polarity_index": self.polarity_index.astype(np.float32), "valid": self.valid.astype(np.float32),
        }


def default_mask(stack) -> np.ndarray:
    if stack.ground_truth is not None:
        return stack.ground_truth.labels > 0
    return np.ones(stack.shape, dtype=bool)


def fit_map(stack, opts: FitOptions = FitOptions(), mask=None, threads: int = 1, chunk: int = 4096) -> MapFit:
    """Pixel-wise polarity-restoring fit of a :class:`MolliStack`.

    Pixels outside ``mask`` (default: non-background ground truth, or all
    pixels) are skipped and left NaN.
    """
    shape = stack.shape
    mask = default_mask(stack) if mask is None else np.asarray(mask, dtype=bool)
    curves = stack.curves()
    tis = stack.sorted_tis()
    sel = np.flatnonzero(mask.ravel())
    pieces = [sel[i:i + chunk] for i in range(0, sel.size, chunk)]

    def work(px):
        return fit_curves(np.broadcast_to(tis, (px.size, tis.size)), curves[px], opts)

    if threads > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            fits = list(ex.map(work, pieces))
    else:
        fits = [work(px) for px in pieces]

    npx = shape[0] * shape[1]
    params = np.full((npx, 3), np.nan)
    resid = np.full(npx, np.nan)
    conv = np.zeros(npx, dtype=bool)
    pol = np.zeros(npx, dtype=np.int64)
    for px, f in zip(pieces, fits):
        params[px] = f.params
        resid[px] = f.cost
        conv[px] = f.converged
        pol[px] = f.polarity_index
    t1 = apparent_to_true_t1(params)
    valid = np.zeros(npx, dtype=bool)
    valid[sel] = np.isfinite(t1[sel]) & np.any(curves[sel] > 0, axis=1)
    rs = lambda x: x.reshape(shape)
    return MapFit(rs(params[:, 0]), rs(params[:, 1]), rs(params[:, 2]), rs(t1), rs(resid), rs(conv), rs(pol), rs(valid))


def jacobian_check(rng: np.random.Generator, n_points: int = 100, step: float = 1e-6, ranges=None) -> float:
    """Worst relative error of :func:`jacobian` against central differences.

    Each parameter is stepped by ``step`` relative to its value, so the
    comparison is done on the log-parameter sensitivities ``p_j df/dp_j``,
    norm-wise per (params, t) point.
    """
    from molli_t1.synthdata.curves import ParamRanges, sample_param_array

    p = sample_param_array(rng, n_points, ranges or ParamRanges())
    t = rng.uniform(0.0, 6000.0, size=(n_points, 1))
    J = jacobian(p, t)[:, 0, :] * p
    fd = np.empty_like(J)
    for j in range(3):
        h = step * p[:, j]
        pp, pm = p.copy(), p.copy()
        pp[:, j] += h
        pm[:, j] -= h
        fd[:, j] = (model(pp, t) - model(pm, t))[:, 0] / (2 * h) * p[:, j]
    err = np.linalg.norm(J - fd, axis=1) / np.maximum(np.linalg.norm(J, axis=1), np.linalg.norm(fd, axis=1))
    return float(np.max(err))

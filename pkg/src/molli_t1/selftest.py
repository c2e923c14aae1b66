"""Fast invariant suite behind ``molli-t1 selftest``."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from molli_t1 import lmfit
from molli_t1.rnn import loss as rnn_loss
from molli_t1.rnn.model import RnnConfig
from molli_t1.rnn.train import grad_check
from molli_t1.signal_model import molli_signal, signed_signal
from molli_t1.synthdata.curves import PerturbationClass, gen_batch_arrays, sample_param_array

JACOBIAN_TOL = 1e-6
IDENTITY_TOL = 1e-12
GRAD_TOL = 1e-5
ORACLE_TOL = 1e-4


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float


def loss_identity_gaps(rng: np.random.Generator, n: int = 100) -> dict:
    """Compare the long (full-model difference) form of each loss term with its short form.

    Returns the largest absolute gap per line, both against the short form as
    returned by :func:`loss_terms` (``printed``) and against its negation
    (``negated``). The long form of the B and T1* lines equals the negated
    short form. Also reports the magnitude/signed model consistency gap.
    """
    pred = sample_param_array(rng, n)
    truth = sample_param_array(rng, n)
    t = np.sort(rng.uniform(0.0, 6000.0, size=(n, 8)), axis=1)
    a_p, b_p, s_p = (pred[:, i:i + 1] for i in range(3))
    a_t, b_t, s_t = (truth[:, i:i + 1] for i in range(3))
    ref = a_t - b_t * np.exp(-t / s_t)
    long_forms = {
        "a": a_p - b_t * np.exp(-t / s_t) - ref,
        "b": a_t - b_p * np.exp(-t / s_t) - ref,
        "t1_star": a_t - b_t * np.exp(-t / s_p) - ref,
    }
    short = dict(zip(("a", "b", "t1_star"), rnn_loss.loss_terms(pred, truth, t)))
    gaps = {
        "model": float(np.max(np.abs(molli_signal(pred[:, None, :], t) - np.abs(signed_signal(pred[:, None, :], t))))),
    }
    for k in long_forms:
        gaps[f"printed_{k}"] = float(np.max(np.abs(long_forms[k] - short[k])))
        gaps[f"negated_{k}"] = float(np.max(np.abs(long_forms[k] + short[k])))
    return gaps


def loss_identity_error(rng: np.random.Generator, n: int = 100) -> float:
    """Worst gap of the sign-corrected identities (A as printed, B and T1* negated)."""
    g = loss_identity_gaps(rng, n)
    return max(g["model"], g["printed_a"], g["negated_b"], g["negated_t1_star"])


def oracle_fit_error(rng: np.random.Generator, n: int = 99) -> float:
    """Worst relative parameter error of LM on noiseless signed curves."""
    batch = gen_batch_arrays(n, rng, classes=[PerturbationClass.IDEAL])
    signed = signed_signal(batch.params[:, None, :], batch.times)
    init = lmfit.init_guess_batch(batch.times, np.abs(signed))
    fit = lmfit.lm_batch(batch.times, signed, init)
    return float(np.max(np.abs(fit.params - batch.params) / batch.params))


def _timed(name, fn, tol):
    t0 = time.perf_counter()
    try:
        value = fn()
        passed = bool(value < tol)
        detail = f"{value:.3e} < {tol:g}" if passed else f"{value:.3e} >= {tol:g}"
    except Exception as exc:  # a crashing check is a failed check
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return Check(name, passed, detail, time.perf_counter() - t0)


def run_all(seed: int = 0) -> list[Check]:
    return [
        _timed("lm jacobian vs fd", lambda: lmfit.jacobian_check(np.random.default_rng(seed)), JACOBIAN_TOL),
        _timed("loss identities (signed)", lambda: loss_identity_error(np.random.default_rng(seed + 1)), IDENTITY_TOL),
        _timed("bptt grad check (16 cells)", lambda: grad_check(RnnConfig(hidden_units=16), np.random.default_rng(seed + 2)), GRAD_TOL),
        _timed("oracle lm fit (99 curves)", lambda: oracle_fit_error(np.random.default_rng(seed + 3)), ORACLE_TOL),
    ]

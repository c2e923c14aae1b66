"""MOLLI three-parameter recovery model.

The magnitude signal of a Look-Locker inversion recovery is

    y(t) = |A - B * exp(-t / T1*)|

with the apparent relaxation time T1* converted to the true longitudinal
relaxation time by ``T1 = T1* * (B / A - 1)``.

All functions accept scalars or numpy arrays and broadcast; times are in ms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ModelParams:
    """Recovery model parameters for a single curve.

    Parameters
    ----------
    a
        Apparent equilibrium amplitude (arbitrary units).
    b
        Recovery span amplitude (arbitrary units).
    t1_star
        Apparent relaxation time in ms.
    """

    a: float
    b: float
    t1_star: float

    @property
    def t1(self) -> float:
        return apparent_to_true_t1(self)

    def is_valid(self) -> bool:
        return self.a > 0 and self.b > 0 and self.t1_star > 0

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.t1_star], dtype=np.float64)

    @classmethod
    def from_array(cls, p) -> "ModelParams":
        return cls(float(p[0]), float(p[1]), float(p[2]))


class CurveError(ValueError):
    """Raised when a signal curve violates its structural invariants."""


@dataclass(frozen=True)
class SignalCurve:
    """Inversion times (ms) and magnitude samples of one pixel.

    Construction sorts by inversion time and checks that the times are
    distinct and non-negative and the magnitudes non-negative.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64).ravel()
        y = np.asarray(self.values, dtype=np.float64).ravel()
        if t.shape != y.shape:
            raise CurveError(f"times and values differ in length ({t.size} vs {y.size})")
        if t.size < 4:
            raise CurveError(f"curve needs at least 4 samples, got {t.size}")
        order = np.argsort(t, kind="stable")
        t, y = t[order], y[order]
        if np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise CurveError("inversion times must be non-negative and pairwise distinct")
        if np.any(~np.isfinite(y)) or np.any(y < 0):
            raise CurveError("magnitude values must be finite and non-negative")
        t.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)

    def __len__(self) -> int:
        return self.times.size


def _abt(params):
    if isinstance(params, ModelParams):
        return params.a, params.b, params.t1_star
    p = np.asarray(params, dtype=np.float64)
    return p[..., 0], p[..., 1], p[..., 2]


def signed_signal(params, t):
    """Pre-magnitude model ``a - b * exp(-t / t1_star)``."""
    a, b, t1s = _abt(params)
    return a - b * np.exp(-np.asarray(t, dtype=np.float64) / t1s)


def molli_signal(params, t):
    """Magnitude model ``|a - b * exp(-t / t1_star)|``."""
    return np.abs(signed_signal(params, t))


def apparent_to_true_t1(params):
    """Convert the apparent T1* to T1 via ``t1_star * (b / a - 1)``.

    No validity check is made; ``b < a`` yields a non-positive T1.
    """
    a, b, t1s = _abt(params)
    with np.errstate(divide="ignore", invalid="ignore"):
        return t1s * (b / a - 1.0)


def null_time(params: ModelParams) -> Optional[float]:
    """Time at which the signed signal crosses zero, or ``None`` if it never does.

    A crossing exists for ``b >= a`` (``b == a`` crosses at t = 0).
    """
    a, b, t1s = _abt(params)
    if b < a:
        return None
    return float(t1s * np.log(b / a))

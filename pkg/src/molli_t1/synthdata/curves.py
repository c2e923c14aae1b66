"""Synthetic training/test curves with the three balanced perturbation classes."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from molli_t1.signal_model import CurveError, ModelParams, SignalCurve, molli_signal
from molli_t1.synthdata.schedule import (
    MolliScheme,
    ScheduleError,
    TiSchedule,
    make_ti_schedule,
    raw_tis,
    sample_rr_batch,
)


class PerturbationClass(enum.IntEnum):
    IDEAL = 0
    NOISE = 1
    OUTLIERS = 2

    @property
    def tag(self) -> str:
        return self.name.lower()

    @classmethod
    def from_tag(cls, tag: str) -> "PerturbationClass":
        return cls[tag.upper()]


class BatchSizeError(ValueError):
    pass


@dataclass(frozen=True)
class ParamRanges:
    """Uniform sampling ranges; ``ratio`` is b/a."""

    a: tuple[float, float] = (0.2, 1.0)
    ratio: tuple[float, float] = (1.3, 2.1)
    t1_star: tuple[float, float] = (150.0, 1800.0)

    def __post_init__(self):
        for name in ("a", "ratio", "t1_star"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"range {name} has min > max")
        if self.a[0] <= 0 or self.ratio[0] <= 0 or self.t1_star[0] <= 0:
            raise ValueError("parameter ranges must be positive")


@dataclass(frozen=True)
class Perturbation:
    """Settings of the noise and outlier classes."""

    noise_fraction: float = 0.05
    outlier_count: int = 2
    outlier_factor: tuple[float, float] = (0.3, 1.5)
    clamp: bool = True


@dataclass(frozen=True)
class Acquisition:
    """Scheme plus the heart-rate model that jitters its time axis."""

    scheme: MolliScheme = field(default_factory=MolliScheme)
    base_tis: tuple[float, ...] = (100.0, 180.0)
    hr_range: tuple[float, float] = (30.0, 120.0)
    rr_sd: float = 200.0
    min_rr: float = 300.0

    @property
    def n_samples(self) -> int:
        return self.scheme.n_acquisitions


@dataclass
class CurveBatch:
    """Array form of a batch: sorted ``times`` and ``values`` are ``(n, m)``."""

    times: np.ndarray
    values: np.ndarray
    params: np.ndarray
    classes: np.ndarray
    rr: np.ndarray

    def __len__(self) -> int:
        return self.times.shape[0]


def sample_params(rng: np.random.Generator, ranges: ParamRanges = ParamRanges()) -> ModelParams:
    return ModelParams.from_array(sample_param_array(rng, 1, ranges)[0])


def sample_param_array(rng, n, ranges: ParamRanges = ParamRanges()) -> np.ndarray:
    u = rng.random((n, 3))
    a = ranges.a[0] + u[:, 0] * (ranges.a[1] - ranges.a[0])
    r = ranges.ratio[0] + u[:, 1] * (ranges.ratio[1] - ranges.ratio[0])
    t1s = ranges.t1_star[0] + u[:, 2] * (ranges.t1_star[1] - ranges.t1_star[0])
    return np.stack([a, a * r, t1s], axis=1)


def _perturb(ideal, a, cls, rng, pert: Perturbation):
    """Apply class ``cls`` to rows of ``ideal`` (shape ``(k, m)``)."""
    y = ideal.copy()
    if cls == PerturbationClass.NOISE:
        y = y + rng.normal(0.0, 1.0, size=y.shape) * (pert.noise_fraction * a[:, None])
        if pert.clamp:
            y = np.maximum(y, 0.0)
    elif cls == PerturbationClass.OUTLIERS:
        k, m = y.shape
        if pert.outlier_count > m:
            raise CurveError("more outliers requested than samples")
        idx = np.argsort(rng.random((k, m)), axis=1)[:, : pert.outlier_count]
        lo, hi = pert.outlier_factor
        factors = rng.uniform(lo, hi, size=idx.shape)
        rows = np.arange(k)[:, None]
        y[rows, idx] = y[rows, idx] * factors
    return y


def gen_curve(
    params: ModelParams,
    schedule: TiSchedule,
    cls: PerturbationClass,
    rng: np.random.Generator,
    pert: Perturbation = Perturbation(),
) -> SignalCurve:
    """Render one curve on ``schedule`` and apply perturbation class ``cls``."""
    t = schedule.effective_tis
    if t.size < 4:
        raise CurveError(f"schedule has {t.size} inversion times, need >= 4")
    ideal = molli_signal(params, t)[None, :]
    y = _perturb(ideal, np.array([params.a]), PerturbationClass(cls), rng, pert)[0]
    return SignalCurve(t, y)


def gen_batch_arrays(
    n: int,
    rng: np.random.Generator,
    ranges: ParamRanges = ParamRanges(),
    acq: Acquisition = Acquisition(),
    pert: Perturbation = Perturbation(),
    classes=None,
) -> CurveBatch:
    """Generate ``n`` curves, ``n / 3`` per class, in shuffled order.

    ``classes`` restricts generation to the given class list (the balance
    requirement then applies to that list).
    """
    classes = list(PerturbationClass) if classes is None else [PerturbationClass(c) for c in classes]
    if n % len(classes):
        raise BatchSizeError(f"batch size {n} is not divisible by {len(classes)} classes")
    if acq.n_samples < 4:
        raise CurveError("scheme yields fewer than 4 samples")
    labels = rng.permutation(np.repeat(np.array(classes, dtype=np.int64), n // len(classes)))
    params = sample_param_array(rng, n, ranges)
    rr = sample_rr_batch(rng, n, acq.scheme.total_beats, acq.hr_range, acq.rr_sd, acq.min_rr)
    times = np.sort(raw_tis(acq.scheme, acq.base_tis, rr), axis=1)
    if n and np.any(np.diff(times, axis=1) <= 0):
        raise ScheduleError("duplicate inversion time in generated schedule")
    values = molli_signal(params[:, None, :], times)
    for c in classes:
        sel = np.flatnonzero(labels == c)
        if sel.size:
            values[sel] = _perturb(values[sel], params[sel, 0], c, rng, pert)
    return CurveBatch(times, values, params, labels, rr)


def gen_batch(
    n: int,
    rng: np.random.Generator,
    ranges: ParamRanges = ParamRanges(),
    acq: Acquisition = Acquisition(),
    pert: Perturbation = Perturbation(),
) -> list[tuple[SignalCurve, ModelParams, TiSchedule, PerturbationClass]]:
    """Balanced batch as a list of ``(curve, params, schedule, class)`` tuples."""
    batch = gen_batch_arrays(n, rng, ranges, acq, pert)
    out = []
    for i in range(n):
        sched = make_ti_schedule(acq.scheme, acq.base_tis, batch.rr[i])
        out.append((
            SignalCurve(batch.times[i], batch.values[i]),
            ModelParams.from_array(batch.params[i]),
            sched,
            PerturbationClass(int(batch.classes[i])),
        ))
    return out

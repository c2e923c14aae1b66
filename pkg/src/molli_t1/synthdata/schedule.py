"""MOLLI beat patterns and heart-rate dependent inversion-time schedules."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class MolliScheme:
    """Beat pattern such as ``5(3)3``.

    ``acquisitions[i]`` images are read in inversion block ``i``; ``pauses[i]``
    recovery beats separate block ``i`` from block ``i + 1``.
    """

    acquisitions: tuple[int, ...] = (5, 3)
    pauses: tuple[int, ...] = (3,)

    def __post_init__(self):
        if len(self.acquisitions) < 1 or len(self.pauses) != len(self.acquisitions) - 1:
            raise ScheduleError("a scheme needs one pause count between consecutive blocks")
        if any(n < 1 for n in self.acquisitions) or any(p < 0 for p in self.pauses):
            raise ScheduleError("acquisition counts must be >= 1 and pauses >= 0")

    @classmethod
    def parse(cls, text: str) -> "MolliScheme":
        text = text.replace(" ", "")
        if not re.fullmatch(r"\d+(\(\d+\)\d+)*", text):
            raise ScheduleError(f"cannot parse MOLLI scheme {text!r}")
        nums = [int(n) for n in re.findall(r"\d+", text)]
        return cls(tuple(nums[0::2]), tuple(nums[1::2]))

    def __str__(self) -> str:
        out = str(self.acquisitions[0])
        for p, n in zip(self.pauses, self.acquisitions[1:]):
            out += f"({p}){n}"
        return out

    @property
    def n_acquisitions(self) -> int:
        return sum(self.acquisitions)

    @property
    def total_beats(self) -> int:
        return sum(self.acquisitions) + sum(self.pauses)

    def block_starts(self) -> list[int]:
        """Beat index of the first acquisition of each block."""
        starts, beat = [], 0
        for i, n in enumerate(self.acquisitions):
            starts.append(beat)
            beat += n + (self.pauses[i] if i < len(self.pauses) else 0)
        return starts


@dataclass(frozen=True)
class TiSchedule:
    """Effective inversion times of one acquisition.

    ``effective_tis`` is sorted ascending; ``order[j]`` is the acquisition
    index (in beat order) of the j-th sorted inversion time.
    """

    scheme: MolliScheme
    base_tis: tuple[float, ...]
    rr_intervals: np.ndarray
    effective_tis: np.ndarray
    order: np.ndarray

    def __len__(self) -> int:
        return self.effective_tis.size


def sample_rr_sequence(
    rng: np.random.Generator,
    n_beats: int,
    hr_range: tuple[float, float] = (30.0, 120.0),
    rr_sd: float = 200.0,
    min_rr: float = 300.0,
) -> np.ndarray:
    """Draw ``n_beats`` R-R intervals (ms) around one uniformly drawn heart rate."""
    if n_beats < 1:
        raise ValueError("n_beats must be >= 1")
    return sample_rr_batch(rng, 1, n_beats, hr_range, rr_sd, min_rr)[0]


def sample_rr_batch(rng, n_curves, n_beats, hr_range=(30.0, 120.0), rr_sd=200.0, min_rr=300.0):
    """Vectorised :func:`sample_rr_sequence`, shape ``(n_curves, n_beats)``."""
    hr = rng.uniform(hr_range[0], hr_range[1], size=(n_curves, 1))
    base = 60000.0 / hr
    jitter = rng.normal(0.0, 1.0, size=(n_curves, n_beats)) * rr_sd
    return np.maximum(base + jitter, min_rr)


def raw_tis(scheme: MolliScheme, base_tis, rr_intervals) -> np.ndarray:
    """Inversion times in acquisition order; broadcasts over leading R-R axes."""
    rr = np.asarray(rr_intervals, dtype=np.float64)
    if len(base_tis) != len(scheme.acquisitions):
        raise ScheduleError(f"need {len(scheme.acquisitions)} base TIs, got {len(base_tis)}")
    if rr.shape[-1] < scheme.total_beats:
        raise ScheduleError(f"scheme {scheme} needs {scheme.total_beats} R-R intervals, got {rr.shape[-1]}")
    if np.any(rr <= 0):
        raise ScheduleError("R-R intervals must be positive")
    cols = []
    for base, start, n in zip(base_tis, scheme.block_starts(), scheme.acquisitions):
        offsets = np.cumsum(rr[..., start:start + n - 1], axis=-1)
        cols.append(np.full(rr.shape[:-1] + (1,), float(base)))
        if n > 1:
            cols.append(base + offsets)
    return np.concatenate(cols, axis=-1)


def make_ti_schedule(scheme: MolliScheme, base_tis, rr_intervals) -> TiSchedule:
    """Build the sorted effective inversion times for one R-R sequence."""
    rr = np.asarray(rr_intervals, dtype=np.float64).ravel()
    tis = raw_tis(scheme, base_tis, rr)
    order = np.argsort(tis, kind="stable")
    eff = tis[order]
    if np.any(eff < 0) or np.any(np.diff(eff) <= 0):
        raise ScheduleError("effective inversion times are not strictly increasing (duplicate TI)")
    for arr in (rr, eff, order):
        arr.flags.writeable = False
    return TiSchedule(scheme, tuple(float(b) for b in base_tis), rr, eff, order)

"""Procedural short-axis cardiac phantom and synthetic MOLLI image stacks."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from molli_t1.signal_model import molli_signal
from molli_t1.synthdata.schedule import TiSchedule

BACKGROUND, BLOOD, MYOCARDIUM = 0, 1, 2
REGION_NAMES = {BACKGROUND: "background", BLOOD: "blood", MYOCARDIUM: "myocardium"}
BACKGROUND_EPS = 1e-6


class PhantomSpecError(ValueError):
    pass


@dataclass(frozen=True)
class RegionDist:
    """Per-pixel parameter distribution, given as (mean, SD) pairs.

    Tissue is described by amplitude ``a``, inversion ratio ``b / a`` and the
    true ``t1``; the apparent T1* follows as ``t1 / (ratio - 1)``.
    """

    a: tuple[float, float]
    ratio: tuple[float, float]
    t1: tuple[float, float]


@dataclass(frozen=True)
class PhantomSpec:
    grid: tuple[int, int] = (192, 192)
    pixel_spacing: float = 1.5
    outer_radius: float = 45.0
    inner_radius: float = 30.0
    myocardium: RegionDist = RegionDist(a=(0.6, 0.03), ratio=(1.95, 0.03), t1=(1100.0, 50.0))
    blood: RegionDist = RegionDist(a=(0.9, 0.03), ratio=(2.08, 0.01), t1=(1900.0, 60.0))

    def validate(self):
        if self.pixel_spacing <= 0:
            raise PhantomSpecError("pixel_spacing must be positive")
        if min(self.grid) < 1:
            raise PhantomSpecError("grid must be at least 1x1")
        if not 0 <= self.inner_radius < self.outer_radius:
            raise PhantomSpecError("myocardium ring is empty (inner radius >= outer radius)")
        if not np.any(self.label_grid() == MYOCARDIUM):
            raise PhantomSpecError("myocardium ring covers no pixel")

    def label_grid(self) -> np.ndarray:
        ny, nx = self.grid
        yy, xx = np.mgrid[0:ny, 0:nx].astype(np.float64)
        r = np.hypot(yy - (ny - 1) / 2, xx - (nx - 1) / 2)
        labels = np.full((ny, nx), BACKGROUND, dtype=np.int32)
        labels[r < self.outer_radius] = MYOCARDIUM
        labels[r < self.inner_radius] = BLOOD
        return labels


@dataclass
class PhantomMaps:
    """Ground-truth parameter grids and the region label grid."""

    a: np.ndarray
    b: np.ndarray
    t1_star: np.ndarray
    labels: np.ndarray

    @property
    def t1(self) -> np.ndarray:
        return self.t1_star * (self.b / self.a - 1.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape

    def stacked(self) -> np.ndarray:
        """Parameters as an array of shape ``(ny, nx, 3)``."""
        return np.stack([self.a, self.b, self.t1_star], axis=-1)


@dataclass
class MolliStack:
    """Magnitude images ``(m, ny, nx)`` with matching inversion times."""

    images: np.ndarray
    tis: np.ndarray
    pixel_spacing: float
    ground_truth: Optional[PhantomMaps] = None
    corrupted: tuple[int, ...] = ()

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.tis = np.asarray(self.tis, dtype=np.float64).ravel()
        if self.images.ndim != 3 or self.images.shape[0] != self.tis.size:
            raise ValueError("images must be (m, ny, nx) with one inversion time per image")
        if np.any(self.images < 0):
            raise ValueError("magnitude images must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1:]

    def curves(self) -> np.ndarray:
        """Per-pixel curves as ``(ny * nx, m)`` in inversion-time order."""
        order = np.argsort(self.tis, kind="stable")
        return self.images[order].reshape(len(self.tis), -1).T

    def sorted_tis(self) -> np.ndarray:
        return np.sort(self.tis)


def _draw(rng, dist, shape):
    mean, sd = dist
    return mean + sd * rng.standard_normal(shape)


def gen_phantom(spec: PhantomSpec, rng: np.random.Generator) -> PhantomMaps:
    """Draw per-pixel ground truth for every region of ``spec``."""
    spec.validate()
    labels = spec.label_grid()
    shape = labels.shape
    a = np.full(shape, BACKGROUND_EPS)
    b = np.full(shape, BACKGROUND_EPS)
    t1s = np.full(shape, 1000.0)
    for region, dist in ((MYOCARDIUM, spec.myocardium), (BLOOD, spec.blood)):
        mask = labels == region
        # draws always span the full grid so each region's values depend only on the seed
        ra = _draw(rng, dist.a, shape)
        rr = _draw(rng, dist.ratio, shape)
        rt = _draw(rng, dist.t1, shape)
        ra = np.maximum(ra, 1e-3)
        rr = np.maximum(rr, 1.0 + 1e-3)
        rt = np.maximum(rt, 1.0)
        a[mask] = ra[mask]
        b[mask] = (ra * rr)[mask]
        t1s[mask] = (rt / (rr - 1.0))[mask]
    return PhantomMaps(a, b, t1s, labels)


def render_molli_stack(maps: PhantomMaps, schedule, pixel_spacing: float = 1.5) -> MolliStack:
    """Evaluate the magnitude model at every inversion time of ``schedule``."""
    tis = schedule.effective_tis if isinstance(schedule, TiSchedule) else np.asarray(schedule, float)
    if not (maps.a.shape == maps.b.shape == maps.t1_star.shape):
        raise ValueError("parameter grids must share dimensions")
    images = molli_signal(maps.stacked()[None], tis[:, None, None])
    return MolliStack(images, tis.copy(), pixel_spacing, ground_truth=maps)


def add_noise(stack: MolliStack, rng: np.random.Generator, fraction: float = 0.05) -> MolliStack:
    """Add Gaussian noise with SD ``fraction * A`` per pixel, clamped at zero."""
    if stack.ground_truth is None:
        raise ValueError("noise level is defined relative to the ground-truth A map")
    sd = fraction * stack.ground_truth.a
    noisy = stack.images + rng.standard_normal(stack.images.shape) * sd[None]
    return replace(stack, images=np.maximum(noisy, 0.0))

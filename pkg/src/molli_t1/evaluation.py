"""T1 error maps, region statistics and the LM-vs-RNN comparison report."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from molli_t1.lmfit import FitOptions, fit_map
from molli_t1.rng import substream
from molli_t1.rnn.model import NormalizationSpec, RnnWeights
from molli_t1.rnn.train import infer_map
from molli_t1.synthdata.curves import Acquisition
from molli_t1.synthdata.io import dump_json, write_planes_dir
from molli_t1.synthdata.motion import MotionSpec, apply_motion
from molli_t1.synthdata.phantom import (
    BLOOD,
    MYOCARDIUM,
    REGION_NAMES,
    MolliStack,
    PhantomSpec,
    add_noise,
    gen_phantom,
    render_molli_stack,
)
from molli_t1.synthdata.schedule import make_ti_schedule, sample_rr_sequence

log = logging.getLogger(__name__)

CONDITIONS = ("none", "noise", "motion-x", "motion-y", "motion-rot", "motion-all")
PREVIEW_WINDOW = (0.0, 300.0)
PHANTOM_ACQUISITION = Acquisition(hr_range=(60.0, 60.0))


class EmptyRegionError(ValueError):
    pass


@dataclass
class RegionStats:
    mean: float
    median: float
    sd: float
    p95: float
    count: int


@dataclass
class ErrorReport:
    condition: str
    method: str
    regions: dict = field(default_factory=dict)
    maps: dict = field(default_factory=dict)
    corrupted: tuple = ()
    error: Optional[str] = None


def t1_error_map(estimated, truth, valid=None) -> np.ndarray:
    """``|estimated - truth|`` per pixel; invalid or non-finite pixels are NaN."""
    est = np.asarray(estimated, dtype=np.float64)
    gt = np.asarray(truth, dtype=np.float64)
    if est.shape != gt.shape:
        raise ValueError(f"dimension mismatch: {est.shape} vs {gt.shape}")
    err = np.abs(est - gt)
    ok = np.isfinite(err)
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != est.shape:
            raise ValueError(f"dimension mismatch: mask {valid.shape} vs {est.shape}")
        ok &= valid
    return np.where(ok, err, np.nan)


def region_stats(error_map, labels, region: int) -> RegionStats:
    """Statistics of the valid pixels of ``region``.

    SD uses the population convention; the median of an even count is the
    midpoint of the two central values; p95 uses linear interpolation.
    """
    labels = np.asarray(labels)
    vals = np.asarray(error_map, dtype=np.float64)[labels == region]
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        raise EmptyRegionError(f"region {REGION_NAMES.get(region, region)} has no valid pixels")
    return RegionStats(
        mean=float(np.mean(vals)),
        median=float(np.median(vals)),
        sd=float(np.std(vals)),
        p95=float(np.percentile(vals, 95)),
        count=int(vals.size),
    )


def base_stack(seed: int, spec: PhantomSpec = PhantomSpec(), acq: Acquisition = PHANTOM_ACQUISITION) -> MolliStack:
    """Noiseless phantom stack rendered on a seeded, jittered schedule."""
    maps = gen_phantom(spec, substream(seed, "phantom"))
    rr = sample_rr_sequence(substream(seed, "schedule"), acq.scheme.total_beats, acq.hr_range, acq.rr_sd, acq.min_rr)
    sched = make_ti_schedule(acq.scheme, acq.base_tis, rr)
    return render_molli_stack(maps, sched, spec.pixel_spacing)


def corrupt(stack: MolliStack, condition: str, seed: int, motion: MotionSpec = MotionSpec(), noise_fraction: float = 0.05) -> MolliStack:
    """Apply one named condition. All motion conditions corrupt the same image pair."""
    if condition == "none":
        return stack
    if condition == "noise":
        return add_noise(stack, substream(seed, "noise"), noise_fraction)
    parts = {
        "motion-x": replace(motion, rotation_deg=0.0, ty_mm=0.0),
        "motion-y": replace(motion, rotation_deg=0.0, tx_mm=0.0),
        "motion-rot": replace(motion, tx_mm=0.0, ty_mm=0.0),
        "motion-all": motion,
    }
    if condition not in parts:
        raise ValueError(f"unknown condition {condition!r}")
    return apply_motion(stack, parts[condition], substream(seed, "motion"))


def write_pgm(path, plane, window=PREVIEW_WINDOW) -> None:
    lo, hi = window
    v = np.nan_to_num(np.asarray(plane, dtype=np.float64), nan=lo)
    g = np.clip(np.round((v - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
    ny, nx = g.shape
    Path(path).write_bytes(f"P5\n{nx} {ny}\n255\n".encode("ascii") + g.tobytes())


def _stats_for(err, labels, regions):
    out = {}
    for r in regions:
        try:
            out[REGION_NAMES[r]] = asdict(region_stats(err, labels, r))
        except EmptyRegionError:
            continue
    return out


def compare_methods(
    seed: int,
    conditions: Sequence[str] = CONDITIONS,
    fit_options: FitOptions = FitOptions(),
    weights: Optional[RnnWeights] = None,
    norm: NormalizationSpec = NormalizationSpec(),
    spec: PhantomSpec = PhantomSpec(),
    acq: Acquisition = PHANTOM_ACQUISITION,
    motion: MotionSpec = MotionSpec(),
    noise_fraction: float = 0.05,
    out_dir=None,
    threads: int = 1,
    regions: Sequence[int] = (MYOCARDIUM, BLOOD),
) -> list[ErrorReport]:
    """Run LM (and the RNN, if ``weights`` is given) on every condition.

    Failures are recorded on the condition's reports and do not stop the
    remaining conditions. With ``out_dir`` the report files are written.
    """
    reports: list[ErrorReport] = []
    if not conditions:
        if out_dir is not None:
            write_report(out_dir, reports)
        return reports
    base = base_stack(seed, spec, acq)
    gt = base.ground_truth
    methods = ["lm"] + (["rnn"] if weights is not None else [])
    for cond in conditions:
        try:
            stack = corrupt(base, cond, seed, motion, noise_fraction)
        except Exception as exc:  # reported per condition
            log.error("condition %s failed: %s", cond, exc)
            reports += [ErrorReport(cond, m, error=f"{type(exc).__name__}: {exc}") for m in methods]
            continue
        for method in methods:
            rep = ErrorReport(cond, method, corrupted=tuple(stack.corrupted))
            try:
                if method == "lm":
                    res = fit_map(stack, fit_options, threads=threads)
                else:
                    res = infer_map(weights, stack, norm)
                err = t1_error_map(res.t1, gt.t1, res.valid)
                rep.regions = _stats_for(err, gt.labels, regions)
                if out_dir is not None:
                    d = Path(out_dir) / "maps" / cond
                    write_planes_dir(d / method, {"t1": res.t1, "error": err}, {"condition": cond, "method": method})
                    write_pgm(d / f"{method}_error.pgm", err)
                    rep.maps = {
                        "t1": f"maps/{cond}/{method}/t1.f32",
                        "error": f"maps/{cond}/{method}/error.f32",
                        "preview": f"maps/{cond}/{method}_error.pgm",
                    }
            except Exception as exc:  # reported per condition
                log.error("condition %s method %s failed: %s", cond, method, exc)
                rep.error = f"{type(exc).__name__}: {exc}"
            reports.append(rep)
    if out_dir is not None:
        d = Path(out_dir) / "maps" / "ground_truth"
        write_planes_dir(d, {"t1": gt.t1, "labels": gt.labels}, {"condition": "ground_truth"})
        write_report(out_dir, reports)
    return reports


SUMMARY_FIELDS = ("condition", "method", "region", "mean", "median", "sd", "p95", "count")


def summary_rows(reports: Sequence[ErrorReport]) -> list[dict]:
    rows = []
    for rep in reports:
        for region, st in rep.regions.items():
            rows.append({"condition": rep.condition, "method": rep.method, "region": region, **st})
    return rows


def write_report(out_dir, reports: Sequence[ErrorReport]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(out / "report.json", {"reports": [asdict(r) for r in reports]})
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in summary_rows(reports):
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def myocardium_mean(reports: Sequence[ErrorReport], condition: str, method: str) -> float:
    for rep in reports:
        if rep.condition == condition and rep.method == method and "myocardium" in rep.regions:
            return rep.regions["myocardium"]["mean"]
    raise KeyError(f"no myocardium statistics for {condition}/{method}")

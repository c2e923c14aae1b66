"""Run configuration: YAML file merged over defaults, then CLI overrides."""

from __future__ import annotations

import copy
from dataclasses import fields
from pathlib import Path

import yaml

from molli_t1.lmfit import FitOptions
from molli_t1.rnn.model import NormalizationSpec, RnnConfig
from molli_t1.synthdata.curves import Acquisition, ParamRanges, Perturbation
from molli_t1.synthdata.motion import MotionSpec
from molli_t1.synthdata.phantom import PhantomSpec, RegionDist
from molli_t1.synthdata.schedule import MolliScheme


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "acquisition": {
        "scheme": "5(3)3",
        "base_tis": [100.0, 180.0],
        "heart_rate": [30.0, 120.0],
        "rr_sd": 200.0,
        "min_rr": 300.0,
    },
    "ranges": {"a": [0.2, 1.0], "ratio": [1.3, 2.1], "t1_star": [150.0, 1800.0]},
    "perturbation": {"noise_fraction": 0.05, "outlier_count": 2, "outlier_factor": [0.3, 1.5], "clamp": True},
    "curves": {"n": 3000},
    "phantom": {
        "grid": [192, 192],
        "pixel_spacing": 1.5,
        "outer_radius": 45.0,
        "inner_radius": 30.0,
        "heart_rate": [60.0, 60.0],
        "noise": False,
        "myocardium": {"a": [0.6, 0.03], "ratio": [1.95, 0.03], "t1": [1100.0, 50.0]},
        "blood": {"a": [0.9, 0.03], "ratio": [2.08, 0.01], "t1": [1900.0, 60.0]},
    },
    "motion": {
        "enabled": False,
        "rotation_deg": 15.0,
        "tx_mm": 15.0,
        "ty_mm": 15.0,
        "targets": None,
        "mode": "composite",
        "fill": 0.0,
    },
    "fit": {
        "max_iterations": 100,
        "cost_tolerance": 1e-12,
        "param_tolerance": 1e-10,
        "initial_damping": 1e-3,
        "damping_up": 10.0,
        "damping_down": 0.1,
        "polarity_search": True,
    },
    "rnn": {
        "hidden_units": 64,
        "epochs": 32,
        "curves_per_epoch": 65535,
        "batch_size": 192,
        "learning_rate": 3e-3,
        "lr_decay": 0.93,
        "loss_mode": "terms",
        "validation_curves": 3000,
    },
    "norm": {"time_scale": 5000.0},
    "eval": {"conditions": ["none", "noise", "motion-x", "motion-y", "motion-rot", "motion-all"]},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def _pair(v, name):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{name} must be a two-element list")
    return (float(v[0]), float(v[1]))


class RunConfig:
    """Fully resolved run configuration (a nested dict with typed accessors)."""

    def __init__(self, data: dict | None = None):
        self.data = _merge(DEFAULTS, data or {})
        self._validate()

    @classmethod
    def load(cls, path=None, overrides: dict | None = None, sets=()) -> "RunConfig":
        data: dict = {}
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"config file {p} not found")
            try:
                data = yaml.safe_load(p.read_text()) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{p}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError(f"{p}: top level must be a mapping")
        merged = _merge(DEFAULTS, data)
        for item in sets:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, raw = item.split("=", 1)
            node = merged
            parts = key.split(".")
            for part in parts[:-1]:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = yaml.safe_load(raw)
        for key, val in (overrides or {}).items():
            if val is not None:
                merged[key] = val
        return cls(merged)

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.data, sort_keys=False))

    def _validate(self):
        try:
            self.acquisition()
            self.ranges()
            self.perturbation()
            self.phantom_spec().validate()
            self.phantom_acquisition()
            self.motion()
            self.fit_options()
            self.rnn_config()
            self.norm()
            n = int(self.data["curves"]["n"])
        except (TypeError, ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid configuration: {exc}") from exc
        if n < 0 or n % 3:
            raise ConfigError(f"curves.n = {n} must be a non-negative multiple of 3 (balanced classes)")

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def acquisition(self, heart_rate=None) -> Acquisition:
        a = self.data["acquisition"]
        return Acquisition(
            scheme=MolliScheme.parse(str(a["scheme"])),
            base_tis=tuple(float(t) for t in a["base_tis"]),
            hr_range=_pair(heart_rate if heart_rate is not None else a["heart_rate"], "heart_rate"),
            rr_sd=float(a["rr_sd"]),
            min_rr=float(a["min_rr"]),
        )

    def phantom_acquisition(self) -> Acquisition:
        return self.acquisition(heart_rate=self.data["phantom"]["heart_rate"])

    def ranges(self) -> ParamRanges:
        r = self.data["ranges"]
        return ParamRanges(_pair(r["a"], "ranges.a"), _pair(r["ratio"], "ranges.ratio"), _pair(r["t1_star"], "ranges.t1_star"))

    def perturbation(self) -> Perturbation:
        p = self.data["perturbation"]
        return Perturbation(float(p["noise_fraction"]), int(p["outlier_count"]), _pair(p["outlier_factor"], "outlier_factor"), bool(p["clamp"]))

    def phantom_spec(self) -> PhantomSpec:
        p = self.data["phantom"]

        def region(d, name):
            return RegionDist(_pair(d["a"], f"{name}.a"), _pair(d["ratio"], f"{name}.ratio"), _pair(d["t1"], f"{name}.t1"))

        return PhantomSpec(
            grid=(int(p["grid"][0]), int(p["grid"][1])),
            pixel_spacing=float(p["pixel_spacing"]),
            outer_radius=float(p["outer_radius"]),
            inner_radius=float(p["inner_radius"]),
            myocardium=region(p["myocardium"], "myocardium"),
            blood=region(p["blood"], "blood"),
        )

    def motion(self) -> MotionSpec:
        m = self.data["motion"]
        targets = None if m["targets"] is None else tuple(int(i) for i in m["targets"])
        if m["mode"] not in ("composite", "split"):
            raise ConfigError("motion.mode must be 'composite' or 'split'")
        return MotionSpec(float(m["rotation_deg"]), float(m["tx_mm"]), float(m["ty_mm"]), targets, fill=float(m["fill"]), mode=m["mode"])

    def fit_options(self) -> FitOptions:
        return FitOptions(**{f.name: self.data["fit"][f.name] for f in fields(FitOptions)})

    def rnn_config(self) -> RnnConfig:
        return RnnConfig(**self.data["rnn"], seed=self.seed)

    def norm(self) -> NormalizationSpec:
        return NormalizationSpec(float(self.data["norm"]["time_scale"]))

    def conditions(self) -> list[str]:
        return list(self.data["eval"]["conditions"])

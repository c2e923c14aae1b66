"""Command-line front end: ``molli-t1 <command> [--config PATH] [--seed N] [--out DIR] [--threads N]``.

Exit codes: 0 success, 1 usage/config error, 2 runtime/data error,
3 self-test failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from molli_t1 import evaluation as ev
from molli_t1.config import ConfigError, RunConfig
from molli_t1.lmfit import fit_map
from molli_t1.rng import substream
from molli_t1.rnn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint, write_history
from molli_t1.rnn.train import TrainingDiverged, infer_map, init_state, train
from molli_t1.synthdata.curves import gen_batch_arrays
from molli_t1.synthdata.io import FormatError, read_stack, write_curves_binary, write_curves_csv, write_planes_dir, write_stack
from molli_t1.synthdata.motion import apply_motion
from molli_t1.synthdata.phantom import REGION_NAMES, add_noise

log = logging.getLogger("molli_t1")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_SELFTEST = 0, 1, 2, 3
CHECKPOINT_NAME = "checkpoint.mrnn"


class RuntimeFailure(RuntimeError):
    pass


def _out(args) -> Path:
    if args.out is None:
        raise ConfigError("--out DIR is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _acq_descriptor(cfg: RunConfig) -> dict:
    a = cfg.data["acquisition"]
    return {"scheme": str(a["scheme"]), "base_tis": [float(t) for t in a["base_tis"]]}


def cmd_gen_curves(cfg: RunConfig, args) -> int:
    out = _out(args)
    n = int(cfg.data["curves"]["n"])
    batch = gen_batch_arrays(n, substream(cfg.seed, "curves"), cfg.ranges(), cfg.acquisition(), cfg.perturbation())
    write_curves_csv(out / "curves.csv", batch)
    write_curves_binary(out / "curves.bin", batch)
    cfg.dump(out / "config.yaml")
    print(f"wrote {n} curves to {out}")
    return EXIT_OK


def cmd_gen_phantom(cfg: RunConfig, args) -> int:
    out = _out(args)
    stack = ev.base_stack(cfg.seed, cfg.phantom_spec(), cfg.phantom_acquisition())
    if cfg.data["phantom"]["noise"]:
        stack = add_noise(stack, substream(cfg.seed, "noise"), cfg.perturbation().noise_fraction)
    if cfg.data["motion"]["enabled"]:
        stack = apply_motion(stack, cfg.motion(), substream(cfg.seed, "motion"))
    write_stack(out, stack)
    cfg.dump(out / "config.yaml")
    print(f"wrote {stack.images.shape[0]} images ({stack.shape[0]}x{stack.shape[1]}) to {out}; corrupted={list(stack.corrupted)}")
    return EXIT_OK


def _region_summary(path, t1, valid, stack) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("region",) + ev.SUMMARY_FIELDS[3:], lineterminator="\n")
        w.writeheader()
        if stack.ground_truth is None:
            return
        err = ev.t1_error_map(t1, stack.ground_truth.t1, valid)
        for region in sorted(REGION_NAMES):
            if region == 0:
                continue
            try:
                st = ev.region_stats(err, stack.ground_truth.labels, region)
            except ev.EmptyRegionError:
                continue
            row = {"region": REGION_NAMES[region], **{k: repr(v) if isinstance(v, float) else v for k, v in st.__dict__.items()}}
            w.writerow(row)


def _load_stack(args):
    if args.stack is None:
        raise ConfigError("--stack DIR is required")
    return read_stack(args.stack)


def cmd_fit(cfg: RunConfig, args) -> int:
    stack = _load_stack(args)
    out = _out(args)
    res = fit_map(stack, cfg.fit_options(), threads=args.threads)
    write_planes_dir(out / "maps", res.planes(), {"method": "lm", "pixel_spacing": stack.pixel_spacing})
    _region_summary(out / "summary.csv", res.t1, res.valid, stack)
    cfg.dump(out / "config.yaml")
    print(f"fitted {int(res.valid.sum())} pixels; maps in {out / 'maps'}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out(args)
    rcfg, norm = cfg.rnn_config(), cfg.norm()
    from molli_t1.rnn.train import CurveSource

    source = CurveSource(cfg.seed, cfg.ranges(), cfg.acquisition(), cfg.perturbation())
    if args.resume:
        state, ck_cfg, ck_norm, header = load_checkpoint(args.resume)
        if header.get("acquisition") not in (None, _acq_descriptor(cfg)):
            raise ConfigError("checkpoint acquisition scheme differs from the configuration")
        if ck_cfg.hidden_units != rcfg.hidden_units or ck_cfg.seed != rcfg.seed:
            raise ConfigError("checkpoint network size or seed differs from the configuration")
    else:
        state = init_state(rcfg)
    ck_path = out / CHECKPOINT_NAME

    def on_epoch(st):
        e, loss, val = st.history[-1]
        print(f"epoch {e:4d}  loss {loss:.6f}  val T1 err {val:.4f}", flush=True)

    try:
        state = train(rcfg, norm, source, state, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        raise RuntimeFailure(str(exc)) from exc
    save_checkpoint(ck_path, state, rcfg, norm, _acq_descriptor(cfg))
    write_history(out / "history.csv", state.history)
    cfg.dump(out / "config.yaml")
    print(f"checkpoint at epoch {state.epoch} written to {ck_path}")
    return EXIT_OK


def _load_weights(cfg: RunConfig, path):
    if path is None:
        raise ConfigError("--checkpoint PATH is required")
    state, _, norm, header = load_checkpoint(path)
    acq = header.get("acquisition")
    if acq is not None and acq != _acq_descriptor(cfg):
        raise ConfigError(f"checkpoint scheme {acq} does not match configuration {_acq_descriptor(cfg)}")
    return state.weights, norm


def cmd_infer(cfg: RunConfig, args) -> int:
    weights, norm = _load_weights(cfg, args.checkpoint)
    stack = _load_stack(args)
    if stack.images.shape[0] != cfg.acquisition().n_samples:
        raise ConfigError(f"stack has {stack.images.shape[0]} images but scheme expects {cfg.acquisition().n_samples}")
    out = _out(args)
    res = infer_map(weights, stack, norm)
    write_planes_dir(out / "maps", res.planes(), {"method": "rnn", "pixel_spacing": stack.pixel_spacing})
    _region_summary(out / "summary.csv", res.t1, res.valid, stack)
    cfg.dump(out / "config.yaml")
    print(f"inferred {int(res.valid.sum())} pixels; maps in {out / 'maps'}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _out(args)
    weights, norm = (None, cfg.norm()) if args.checkpoint is None else _load_weights(cfg, args.checkpoint)
    if weights is None:
        log.warning("no checkpoint given; evaluating the LM baseline only")
    reports = ev.compare_methods(
        cfg.seed, cfg.conditions(), cfg.fit_options(), weights, norm, cfg.phantom_spec(),
        cfg.phantom_acquisition(), cfg.motion(), cfg.perturbation().noise_fraction, out, args.threads,
    )
    cfg.dump(out / "config.yaml")
    for row in ev.summary_rows(reports):
        if row["region"] == "myocardium":
            print(f"{row['condition']:>11} {row['method']:>4}  myocardium mean |dT1| {row['mean']:10.3f} ms")
    failed = [r for r in reports if r.error]
    for r in failed:
        print(f"condition {r.condition} ({r.method}) failed: {r.error}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_selftest(cfg: RunConfig, args) -> int:
    from molli_t1 import selftest

    rows = selftest.run_all()
    ok = all(r.passed for r in rows)
    for r in rows:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28} {r.detail}  ({r.seconds:.2f} s)")
    return EXIT_OK if ok else EXIT_SELFTEST


COMMANDS = {
    "gen-curves": cmd_gen_curves,
    "gen-phantom": cmd_gen_phantom,
    "fit": cmd_fit,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="molli-t1", description="MOLLI T1 mapping: LM fitting vs. LSTM regression")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--seed", type=int, help="run seed (overrides config)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker cap; outputs do not depend on it")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry, e.g. rnn.epochs=5")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("fit", "infer"):
            p.add_argument("--stack", help="stack directory")
        if name in ("infer", "eval"):
            p.add_argument("--checkpoint", help="weight checkpoint file")
        if name == "train":
            p.add_argument("--resume", help="checkpoint to continue training from")
        if name == "gen-curves":
            p.add_argument("--n", type=int, help="number of curves (divisible by 3)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    sets = list(args.set)
    if getattr(args, "n", None) is not None:
        sets.append(f"curves.n={args.n}")
    try:
        cfg = RunConfig.load(args.config, {"seed": args.seed}, sets)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, CheckpointError, RuntimeFailure, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Weight checkpoints and training-history files.

Checkpoint layout (little-endian): magic ``MRNN``, u32 version, u32 header
length, UTF-8 JSON header, then the float64 tensors listed in
``header["tensors"]`` in that order. Optimiser moments follow the weights
so that training can be resumed exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from molli_t1.rnn.model import TENSOR_ORDER, NormalizationSpec, RnnConfig, RnnWeights
from molli_t1.rnn.train import Adam, TrainState

MAGIC = b"MRNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: TrainState, config: RnnConfig, norm: NormalizationSpec, acquisition: dict | None = None) -> None:
    w, opt = state.weights, state.optimizer
    tensors = [(name, getattr(w, name)) for name in TENSOR_ORDER]
    for prefix, moments in (("adam_m", opt.m), ("adam_v", opt.v)):
        tensors += [(f"{prefix}.{name}", moments[name]) for name in TENSOR_ORDER if name in moments]
    header = {
        "config": dataclasses.asdict(config),
        "norm": dataclasses.asdict(norm),
        "seed": config.seed,
        "epoch": state.epoch,
        "adam_steps": opt.step_count,
        "acquisition": acquisition,
        "history": [[int(e), float(l), float(v)] for e, l, v in state.history],
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(state, config, norm, header)``."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: checkpoint not found")
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {data[:4]!r})")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    pos = 12 + hlen
    arrays = {}
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(spec["shape"]).astype(np.float64)
        pos += count * 8
        arrays[spec["name"]] = arr
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} unexpected trailing bytes")
    cfg = dict(header["config"])
    config = RnnConfig(**cfg)
    norm = NormalizationSpec(**header["norm"])
    w = RnnWeights(**{name: arrays[name] for name in TENSOR_ORDER})
    w.check()
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps, step_count=header["adam_steps"])
    for name in TENSOR_ORDER:
        if f"adam_m.{name}" in arrays:
            opt.m[name] = arrays[f"adam_m.{name}"]
            opt.v[name] = arrays[f"adam_v.{name}"]
    history = [tuple(row) for row in header.get("history", [])]
    return TrainState(w, opt, header["epoch"], history), config, norm, header


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "val_t1_error"])
        for epoch, loss, val in history:
            w.writerow([int(epoch), repr(float(loss)), repr(float(val))])


def read_history(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["epoch"]), float(r["loss"]), float(r["val_t1_error"])) for r in rows]

"""File formats for curve batches and image stacks.

Curve batches
    CSV with one row per curve (``id, class, n, t_1..t_n, y_1..y_n, a, b,
    t1_star``) and a packed little-endian binary file: magic ``MCRV``, u32
    version, u32 count, then per record u32 id, u32 class, u32 n and
    ``2n + 3`` float64 values in the CSV column order.

Stacks
    A directory holding ``manifest.json`` and one raw little-endian float32
    plane per image (and per ground-truth map).
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from molli_t1.synthdata.curves import CurveBatch, PerturbationClass
from molli_t1.synthdata.phantom import MolliStack, PhantomMaps

CURVE_MAGIC = b"MCRV"
CURVE_VERSION = 1
STACK_FORMAT = "molli-stack"
STACK_VERSION = 1
GT_FIELDS = ("a", "b", "t1_star", "labels")


class FormatError(ValueError):
    pass


def write_curves_csv(path, batch: CurveBatch) -> None:
    n = batch.times.shape[1]
    header = ["id", "class", "n"] + [f"t_{k+1}" for k in range(n)] + [f"y_{k+1}" for k in range(n)] + ["a", "b", "t1_star"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(batch)):
            row = [i, PerturbationClass(int(batch.classes[i])).tag, n]
            row += [repr(float(v)) for v in batch.times[i]]
            row += [repr(float(v)) for v in batch.values[i]]
            row += [repr(float(v)) for v in batch.params[i]]
            w.writerow(row)


def read_curves_csv(path) -> CurveBatch:
    times, values, params, classes = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for lineno, row in enumerate(reader, start=2):
            try:
                n = int(row[2])
                times.append([float(v) for v in row[3:3 + n]])
                values.append([float(v) for v in row[3 + n:3 + 2 * n]])
                params.append([float(v) for v in row[3 + 2 * n:6 + 2 * n]])
                classes.append(int(PerturbationClass.from_tag(row[1])))
            except (ValueError, IndexError, KeyError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed curve row ({exc})") from exc
    m = len(times[0]) if times else 0
    return CurveBatch(
        np.array(times, dtype=np.float64).reshape(-1, m),
        np.array(values, dtype=np.float64).reshape(-1, m),
        np.array(params, dtype=np.float64).reshape(-1, 3),
        np.array(classes, dtype=np.int64),
        np.zeros((len(times), 0)),
    )


def write_curves_binary(path, batch: CurveBatch) -> None:
    n = batch.times.shape[1]
    with open(path, "wb") as fh:
        fh.write(CURVE_MAGIC + struct.pack("<II", CURVE_VERSION, len(batch)))
        for i in range(len(batch)):
            fh.write(struct.pack("<III", i, int(batch.classes[i]), n))
            rec = np.concatenate([batch.times[i], batch.values[i], batch.params[i]]).astype("<f8")
            fh.write(rec.tobytes())


def read_curves_binary(path) -> CurveBatch:
    data = Path(path).read_bytes()
    if data[:4] != CURVE_MAGIC or len(data) < 12:
        raise FormatError(f"{path}: bad magic {data[:4]!r} or truncated header")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CURVE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 12
    times, values, params, classes = [], [], [], []
    for i in range(count):
        if pos + 12 > len(data):
            raise FormatError(f"{path}: truncated at record {i}")
        _, cls, n = struct.unpack_from("<III", data, pos)
        pos += 12
        if pos + 8 * (2 * n + 3) > len(data):
            raise FormatError(f"{path}: truncated at record {i}")
        rec = np.frombuffer(data, dtype="<f8", count=2 * n + 3, offset=pos)
        pos += rec.nbytes
        times.append(rec[:n])
        values.append(rec[n:2 * n])
        params.append(rec[2 * n:])
        classes.append(cls)
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    m = len(times[0]) if times else 0
    return CurveBatch(
        np.array(times).reshape(-1, m), np.array(values).reshape(-1, m),
        np.array(params).reshape(-1, 3), np.array(classes, dtype=np.int64), np.zeros((count, 0)),
    )


def write_plane(path, plane) -> None:
    Path(path).write_bytes(np.ascontiguousarray(plane, dtype="<f4").tobytes())


def read_plane(path, shape) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != shape[0] * shape[1]:
        raise FormatError(f"{path}: expected {shape[0] * shape[1]} float32 values, found {raw.size}")
    return raw.reshape(shape).astype(np.float64)


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def load_json(path):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def write_planes_dir(directory, planes: dict, extra: dict) -> None:
    """Write named 2D planes plus a manifest into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    dims = None
    for name, plane in planes.items():
        fname = f"{name}.f32"
        write_plane(d / fname, plane)
        files[name] = fname
        dims = list(np.shape(plane))
    dump_json(d / "manifest.json", {"format": "molli-maps", "version": 1, "dims": dims, **extra, "files": files})


def write_stack(directory, stack: MolliStack) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    images = []
    for k in range(stack.images.shape[0]):
        fname = f"image_{k:03d}.f32"
        write_plane(d / fname, stack.images[k])
        images.append(fname)
    gt = None
    if stack.ground_truth is not None:
        gt = {}
        for name in GT_FIELDS:
            fname = f"gt_{name}.f32"
            write_plane(d / fname, getattr(stack.ground_truth, name))
            gt[name] = fname
    manifest = {
        "format": STACK_FORMAT,
        "version": STACK_VERSION,
        "dims": list(stack.shape),
        "pixel_spacing": float(stack.pixel_spacing),
        "tis": [float(t) for t in stack.tis],
        "corrupted": [int(i) for i in stack.corrupted],
        "images": images,
        "ground_truth": gt,
    }
    dump_json(d / "manifest.json", manifest)


def read_stack(directory) -> MolliStack:
    d = Path(directory)
    path = d / "manifest.json"
    if not path.exists():
        raise FormatError(f"{path}: manifest not found")
    man = load_json(path)
    try:
        if man.get("format") != STACK_FORMAT:
            raise FormatError(f"{path}: not a stack manifest (format={man.get('format')!r})")
        shape = tuple(int(v) for v in man["dims"])
        images = np.stack([read_plane(d / f, shape) for f in man["images"]])
        gt = None
        if man.get("ground_truth"):
            g = {k: read_plane(d / man["ground_truth"][k], shape) for k in GT_FIELDS}
            g["labels"] = g["labels"].astype(np.int32)
            gt = PhantomMaps(**g)
        return MolliStack(
            images, np.array(man["tis"], dtype=np.float64), float(man["pixel_spacing"]),
            ground_truth=gt, corrupted=tuple(int(i) for i in man.get("corrupted", [])),
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise FormatError(f"{path}: missing or malformed field ({exc!r})") from exc

"""Lossless text serialization of models (``.flm``).

Layout::

    flowcast-model <version>
    manifest <one-line JSON: config, spec, target, stats, flags, provenance>
    tensor <layer>.<name> <role> <shape>
    <hex doubles, eight per line>
    ...
    end <sha256 of everything above>

``role`` is ``param``, ``state`` (BN moving statistics), ``adam_m`` or
``adam_v``.  Values are written with ``float.hex`` so a load/save cycle is
bit-exact.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .dataset import NormStats
from .errors import CorruptFile, ShapeMismatch, VersionMismatch
from .flowspace import FlowSpec
from .nn import Model, ModelConfig, build_model
from .train import AdamState

MODEL_MAGIC = "flowcast-model"
MODEL_VERSION = 1
VALUES_PER_LINE = 8


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _tensor_block(key: str, role: str, arr: np.ndarray) -> list[str]:
    shape = ",".join(map(str, arr.shape)) or "scalar"
    flat = [float(v).hex() for v in np.ravel(arr)]
    lines = [f"tensor {key} {role} {shape}"]
    for i in range(0, len(flat), VALUES_PER_LINE):
        lines.append(" ".join(flat[i:i + VALUES_PER_LINE]))
    return lines


def format_model(model: Model, stats: NormStats | None) -> str:
    manifest = {
        "config": asdict(model.config),
        "spec": None if model.spec is None else {
            "names": list(model.spec.names), "reps": list(model.spec.reps)},
        "target": model.target,
        "stats": None if stats is None else {
            "mean": float(stats.mean).hex(), "range": float(stats.range).hex()},
        "trainable": {lyr.name: lyr.trainable for lyr in model.layers},
        "provenance": model.provenance,
        "adam_t": None if model.optimizer_state is None else model.optimizer_state.t,
    }
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION}",
             "manifest " + json.dumps(manifest, sort_keys=True, separators=(",", ":"))]
    for lyr in model.layers:
        for name, arr in lyr.params.items():
            lines += _tensor_block(f"{lyr.name}.{name}", "param", arr)
        for name, arr in lyr.state.items():
            lines += _tensor_block(f"{lyr.name}.{name}", "state", arr)
    opt = model.optimizer_state
    if opt is not None:
        for (lname, name) in sorted(opt.m):
            lines += _tensor_block(f"{lname}.{name}", "adam_m", opt.m[(lname, name)])
            lines += _tensor_block(f"{lname}.{name}", "adam_v", opt.v[(lname, name)])
    body = "\n".join(lines) + "\n"
    return body + f"end {hashlib.sha256(body.encode()).hexdigest()}\n"


def save(model: Model, stats: NormStats | None, path) -> None:
    atomic_write_text(path, format_model(model, stats))


def parse_model(text: str) -> tuple[Model, NormStats | None]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(MODEL_MAGIC + " "):
        raise CorruptFile("not a flowcast model file")
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise CorruptFile("unreadable model header") from None
    if version != MODEL_VERSION:
        raise VersionMismatch(f"model format version {version}; this build reads {MODEL_VERSION}")
    if len(lines) < 3 or not lines[-1].startswith("end "):
        raise CorruptFile("model file is truncated")
    body = "\n".join(lines[:-1]) + "\n"
    if hashlib.sha256(body.encode()).hexdigest() != lines[-1][4:].strip():
        raise CorruptFile("model file checksum mismatch")
    if not lines[1].startswith("manifest "):
        raise CorruptFile("missing manifest")
    try:
        manifest = json.loads(lines[1][len("manifest "):])
        config = ModelConfig(**manifest["config"])
    except (ValueError, TypeError, KeyError) as exc:
        raise CorruptFile(f"bad manifest: {exc}") from None

    model = build_model(config, seed=0)
    tensors: dict[tuple[str, str], np.ndarray] = {}
    i = 2
    body_lines = lines[:-1]
    try:
        while i < len(body_lines):
            head = body_lines[i].split()
            if len(head) != 4 or head[0] != "tensor":
                raise CorruptFile(f"line {i + 1}: expected a tensor header")
            key, role, shape_txt = head[1], head[2], head[3]
            shape = () if shape_txt == "scalar" else tuple(int(s) for s in shape_txt.split(","))
            count = int(np.prod(shape)) if shape else 1
            values: list[float] = []
            i += 1
            while len(values) < count:
                if i >= len(body_lines):
                    raise CorruptFile(f"tensor {key} ends early")
                values += [float.fromhex(v) for v in body_lines[i].split()]
                i += 1
            if len(values) != count:
                raise CorruptFile(f"tensor {key} has {len(values)} values, expected {count}")
            tensors[(key, role)] = np.array(values, dtype=np.float64).reshape(shape)
    except ValueError as exc:
        raise CorruptFile(f"unreadable tensor data: {exc}") from None

    for lyr in model.layers:
        for store, role in ((lyr.params, "param"), (lyr.state, "state")):
            for name, current in store.items():
                arr = tensors.pop((f"{lyr.name}.{name}", role), None)
                if arr is None:
                    raise CorruptFile(f"missing tensor {lyr.name}.{name}")
                if arr.shape != current.shape:
                    raise ShapeMismatch(
                        f"{lyr.name}.{name}: file shape {arr.shape}, config implies {current.shape}")
                store[name] = arr
        lyr.trainable = bool(manifest.get("trainable", {}).get(lyr.name, True))

    if manifest.get("adam_t") is not None:
        opt = AdamState(t=int(manifest["adam_t"]))
        for (key, role), arr in sorted(tensors.items()):
            lname, _, name = key.partition(".")
            (opt.m if role == "adam_m" else opt.v)[(lname, name)] = arr
        model.optimizer_state = opt
    if manifest.get("spec"):
        model.spec = FlowSpec(tuple(manifest["spec"]["names"]), tuple(manifest["spec"]["reps"]))
    model.target = manifest.get("target")
    model.provenance = manifest.get("provenance") or {}
    stats = None
    if manifest.get("stats"):
        stats = NormStats(float.fromhex(manifest["stats"]["mean"]),
                          float.fromhex(manifest["stats"]["range"]))
    return model, stats


def load(path) -> tuple[Model, NormStats | None]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise CorruptFile(f"{path} is not a text model file") from None
    return parse_model(text)

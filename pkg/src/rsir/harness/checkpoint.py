"""Checkpoint file format (version 1).

Layout, all integers little-endian::

    offset 0   8 bytes   magic  b"RSIRCKPT"
    offset 8   u32       format version
    offset 12  u64       header length H
    offset 20  H bytes   UTF-8 JSON header
    offset 20+H          payload: raw little-endian tensor buffers

The header carries the model config, the run config, the epoch counter,
optimizer step counts, the training RNG state, normalisation statistics and
a ``tensors`` table of ``{name, kind, shape, dtype, offset, nbytes}`` entries
(``offset`` is relative to the payload). ``kind`` is ``param``, ``adam_m``
or ``adam_v``; ``name`` is the parameter name.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..backbone import ModelConfig, RsirTransformer
from .optim import AdamW, Moments

MAGIC = b"RSIRCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    header: dict
    tensors: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.header["model_config"])

    @property
    def epoch(self) -> int:
        return int(self.header["epoch"])

    def params(self) -> dict[str, np.ndarray]:
        return {name: arr for (kind, name), arr in self.tensors.items() if kind == "param"}

    def build_model(self) -> RsirTransformer:
        model = RsirTransformer(self.model_config, np.random.default_rng(0))
        self.load_into(model)
        return model

    def load_into(self, model: RsirTransformer, optimizer: AdamW | None = None) -> None:
        named = model.named_parameters()
        stored = self.params()
        if set(named) != set(stored):
            missing = sorted(set(named) - set(stored))[:5]
            extra = sorted(set(stored) - set(named))[:5]
            raise CheckpointError(f"checkpoint does not match model: missing {missing}, unexpected {extra}")
        for name, p in named.items():
            arr = stored[name]
            if arr.shape != p.shape:
                raise CheckpointError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
            p.grad = None
        if optimizer is not None:
            steps = self.header.get("optimizer", {}).get("step", {})
            optimizer.moments = {
                name: Moments(
                    self.tensors[("adam_m", name)].copy(),
                    self.tensors[("adam_v", name)].copy(),
                    int(steps[name]),
                )
                for name in steps
            }


def save_checkpoint(
    path,
    model: RsirTransformer,
    optimizer: AdamW | None = None,
    epoch: int = 0,
    rng_state: dict | None = None,
    run_config: dict | None = None,
    extra: dict | None = None,
) -> Path:
    entries = [("param", name, p.data) for name, p in model.named_parameters().items()]
    steps = {}
    if optimizer is not None:
        for name in sorted(optimizer.moments):
            state = optimizer.moments[name]
            entries.append(("adam_m", name, state.m))
            entries.append(("adam_v", name, state.v))
            steps[name] = state.step
    table, chunks, offset = [], [], 0
    for kind, name, arr in entries:
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        table.append(
            {"kind": kind, "name": name, "shape": list(arr.shape), "dtype": le.dtype.str,
             "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "run_config": run_config,
        "epoch": int(epoch),
        "optimizer": {"step": steps} if optimizer is not None else {},
        "rng_state": rng_state,
        "tensors": table,
        **(extra or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if len(buf) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = _PREFIX.size + hlen
    if len(buf) < start:
        raise CheckpointError(f"{path}: truncated JSON header")
    header = json.loads(buf[_PREFIX.size:start].decode("utf-8"))
    tensors = {}
    for entry in header["tensors"]:
        lo = start + entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(buf):
            raise CheckpointError(f"{path}: tensor {entry['name']} runs past end of file")
        dtype = np.dtype(entry["dtype"])
        arr = np.frombuffer(buf, dtype=dtype, count=entry["nbytes"] // dtype.itemsize, offset=lo)
        tensors[(entry["kind"], entry["name"])] = arr.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
    return Checkpoint(header, tensors)

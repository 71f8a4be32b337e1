"""Window-grouping dumps for trained models.

The dump is JSON::

    {"schema_version": 1,
     "model_config": {...},
     "seed": 0,
     "records": [{"layer": "stage1.block0",
                  "head_group": "rs" | "ir",
                  "sample_map": {"min", "max", "mean", "std"},
                  "ids_shuffle": [[...], ...],          # [B][L]
                  "window_assignment": [[...], ...]},   # [B][L], window of each token
                 ...]}
"""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from ..backbone import RsirTransformer
from ..tensor import Tensor, no_grad
from .checkpoint import load_checkpoint
from .data import read_idx, fit_images

SCHEMA_VERSION = 1

_INDEX_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}}
DUMP_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "model_config", "records"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "model_config": {"type": "object"},
        "seed": {"type": ["integer", "null"]},
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["layer", "head_group", "sample_map", "ids_shuffle", "window_assignment"],
                "additionalProperties": False,
                "properties": {
                    "layer": {"type": "string"},
                    "head_group": {"enum": ["rs", "ir"]},
                    "sample_map": {
                        "type": "object",
                        "required": ["min", "max", "mean", "std"],
                        "properties": {k: {"type": "number"} for k in ("min", "max", "mean", "std")},
                    },
                    "ids_shuffle": _INDEX_MATRIX,
                    "window_assignment": _INDEX_MATRIX,
                },
            },
        },
    },
}


def validate_dump(dump: dict) -> None:
    jsonschema.validate(dump, DUMP_SCHEMA)


def inspect_model(model: RsirTransformer, images: np.ndarray, seed: int | None = 0) -> dict:
    trace: list[dict] = []
    with no_grad():
        model(Tensor(images), np.random.default_rng(seed), trace=trace)
    dump = {
        "schema_version": SCHEMA_VERSION,
        "model_config": model.config.to_dict(),
        "seed": seed,
        "records": trace,
    }
    validate_dump(dump)
    return dump


def load_images(path, image_size: int) -> np.ndarray:
    """``.npy`` arrays (``[3, H, W]`` or ``[B, 3, H, W]``) or IDX image files."""
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path).astype(np.float32)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4:
            raise ValueError(f"expected [3, H, W] or [B, 3, H, W], got {arr.shape}")
        return arr
    return fit_images(read_idx(path), image_size)


def inspect_checkpoint(checkpoint, input_path, seed: int | None = 0) -> dict:
    ckpt = load_checkpoint(checkpoint)
    model = ckpt.build_model()
    images = load_images(input_path, model.config.image_size)
    stats = ckpt.header.get("norm_stats")
    if stats:
        images = (images - np.asarray(stats["mean"])[None, :, None, None]) / np.asarray(stats["std"])[None, :, None, None]
    return inspect_model(model, images.astype(model.parameters()[0].dtype), seed)


def write_dump(path, dump: dict) -> None:
    Path(path).write_text(json.dumps(dump, indent=1))

"""Run configuration and its TOML file format.

A run file has a ``[run]`` table with the :class:`RunConfig` keys and either
``model_config`` (a preset name or a path, relative to the run file) or an
inline ``[model]`` table with :class:`~rsir.backbone.ModelConfig` keys::

    [run]
    seed = 0
    epochs = 30
    batch_size = 64
    base_lr = 0.001
    weight_decay = 0.05
    warmup_epochs = 2
    train_data = "synthetic:two-blobs"
    model_config = "desk"
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..backbone import ModelConfig, tomllib


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 64
    base_lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_epochs: int = 2
    train_data: str = "synthetic:two-blobs"
    eval_data: Optional[str] = None
    model_config: str = "desk"
    out_dir: str = "runs/default"
    eval_seed: Optional[int] = None
    checkpoint_every: int = 1
    hflip: bool = True
    grad_clip: Optional[float] = 5.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if not self.epochs >= self.warmup_epochs >= 0:
            raise ValueError(f"need epochs >= warmup_epochs >= 0, got {self.epochs} and {self.warmup_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr < 0 or self.weight_decay < 0:
            raise ValueError("base_lr and weight_decay must be non-negative")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    @property
    def eval_spec(self) -> str:
        if self.eval_data is not None:
            return self.eval_data
        base = self.train_data.partition("@")[0]
        return f"{base}@test"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**data)


def load_run_file(path) -> tuple[RunConfig, ModelConfig]:
    path = Path(path)
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    run_data = dict(data.get("run", {}))
    if "model" in data:
        model = ModelConfig.from_dict(data["model"])
        run_data.setdefault("model_config", "inline")
    else:
        ref = run_data.get("model_config", "desk")
        candidate = path.parent / ref
        model = ModelConfig.load(candidate if candidate.exists() else ref)
    return RunConfig.from_dict(run_data), model

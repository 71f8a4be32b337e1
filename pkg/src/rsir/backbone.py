"""Four-stage hierarchical RSIR transformer and its size/cost accounting."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import functional as F
from .attention import MECHANISMS, AttentionConfig, AttentionWeights, _trunc_normal, rsir_win
from .tensor import Parameter, Tensor, mac_tag

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

# Hidden/width ratio for the RSIR-T and RSIR-B presets; 4.0 would leave RSIR-B near 61M params.
PRESET_MLP_RATIO = 5.3


@dataclass(frozen=True)
class StageConfig:
    depth: int
    dim: int
    num_heads: int
    window_size: int

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"stage depth must be >= 1, got {self.depth}")
        if self.num_heads < 1 or self.dim % self.num_heads:
            raise ValueError(f"stage dim {self.dim} is not divisible by num_heads {self.num_heads}")
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")


@dataclass(frozen=True)
class ModelConfig:
    stages: tuple[StageConfig, ...]
    image_size: int = 224
    patch_size: int = 4
    in_channels: int = 3
    num_classes: int = 1000
    mlp_ratio: float = 4.0
    mechanism: str = "rsir"

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if len(self.stages) != 4:
            raise ValueError(f"expected 4 stages, got {len(self.stages)}")
        for prev, cur in zip(self.stages, self.stages[1:]):
            if cur.dim != 2 * prev.dim:
                raise ValueError(f"stage dims must double: {[s.dim for s in self.stages]}")
        if self.patch_size != 4:
            raise ValueError("the first stage downsamples by exactly 4")
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.mechanism == "rsir" and any(s.num_heads % 2 for s in self.stages):
            raise ValueError(f"RSIR stages need an even head count, got {[s.num_heads for s in self.stages]}")
        if self.mlp_ratio <= 0:
            raise ValueError("mlp_ratio must be positive")
        self.check_resolution(self.image_size)

    # -- geometry -----------------------------------------------------------

    @property
    def hidden_dims(self) -> list[int]:
        return [int(round(s.dim * self.mlp_ratio)) for s in self.stages]

    def grids(self, resolution: int) -> list[tuple[int, int]]:
        side = resolution // self.patch_size
        return [(side >> i, side >> i) for i in range(4)]

    def stage_tokens(self, resolution: int) -> list[int]:
        return [h * w for h, w in self.grids(resolution)]

    def effective_windows(self, resolution: int) -> list[int]:
        """Window sizes actually used; a window never exceeds its stage's token count."""
        return [min(s.window_size, n) for s, n in zip(self.stages, self.stage_tokens(resolution))]

    def check_resolution(self, resolution: int) -> None:
        if resolution % 32:
            raise ValueError(f"resolution {resolution} is not divisible by 32")
        for i, (n, w) in enumerate(zip(self.stage_tokens(resolution), self.effective_windows(resolution))):
            if n % w:
                raise ValueError(f"stage {i + 1}: {n} tokens are not divisible by window size {w}")

    # -- presets --------------------------------------------------------------

    @classmethod
    def desk(cls, num_classes: int = 10, window_size: int = 4, **kw) -> "ModelConfig":
        stages = [
            StageConfig(1, 16, 2, window_size),
            StageConfig(1, 32, 2, window_size),
            StageConfig(2, 64, 4, window_size),
            StageConfig(1, 128, 4, window_size),
        ]
        return cls(stages, image_size=kw.pop("image_size", 32), num_classes=num_classes, **kw)

    @classmethod
    def rsir_t(cls, **kw) -> "ModelConfig":
        kw.setdefault("mlp_ratio", PRESET_MLP_RATIO)
        return cls._from_table(64, (2, 2, 16, 2), (4, 4, 8, 16), **kw)

    @classmethod
    def rsir_b(cls, **kw) -> "ModelConfig":
        kw.setdefault("mlp_ratio", PRESET_MLP_RATIO)
        return cls._from_table(96, (2, 4, 24, 2), (4, 8, 16, 32), **kw)

    @classmethod
    def _from_table(cls, dim, depths, heads, window_size=49, **kw):
        stages = [StageConfig(d, dim << i, h, window_size) for i, (d, h) in enumerate(zip(depths, heads))]
        return cls(stages, **kw)

    @classmethod
    def preset(cls, name: str) -> "ModelConfig":
        presets = {"desk": cls.desk, "rsir-t": cls.rsir_t, "rsir-b": cls.rsir_b}
        if name not in presets:
            raise KeyError(f"unknown model preset {name!r}; choose from {sorted(presets)}")
        return presets[name]()

    # -- serialisation ----------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stages"] = [dataclasses.asdict(s) for s in self.stages]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        if "preset" in data:
            base = cls.preset(data.pop("preset")).to_dict()
            base.update(data)
            data = base
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        stages = data.pop("stages", None)
        if stages is None:
            raise ValueError("model config needs a 'stages' list")
        return cls(tuple(StageConfig(**s) for s in stages), **data)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        """Read a TOML model config, or resolve a preset name."""
        path = str(path)
        if not Path(path).exists() and path in ("desk", "rsir-t", "rsir-b"):
            return cls.preset(path)
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data.get("model", data))


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Module:
    def parameters(self) -> list[Parameter]:
        raise NotImplementedError


class Linear(Module):
    def __init__(self, name: str, d_in: int, d_out: int, rng, bias: bool = True, std: float = 0.02):
        self.weight = Parameter(_trunc_normal(rng, (d_in, d_out), std), name=f"{name}.weight")
        self.bias = Parameter(np.zeros(d_out), name=f"{name}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class LayerNorm(Module):
    def __init__(self, name: str, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(dim), name=f"{name}.beta")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)

    def parameters(self):
        return [self.gamma, self.beta]


class RsirBlock(Module):
    """Pre-norm block: RSIR attention then MLP, each wrapped in a residual."""

    def __init__(self, name: str, cfg: AttentionConfig, hidden: int, rng):
        self.name = name
        self.cfg = cfg
        self.norm1 = LayerNorm(f"{name}.norm1", cfg.dim)
        self.attn = AttentionWeights.init(cfg.dim, rng, prefix=f"{name}.attn")
        self.norm2 = LayerNorm(f"{name}.norm2", cfg.dim)
        self.fc1 = Linear(f"{name}.mlp.fc1", cfg.dim, hidden, rng)
        self.fc2 = Linear(f"{name}.mlp.fc2", hidden, cfg.dim, rng)

    def parameters(self):
        return (
            self.norm1.parameters() + self.attn.parameters() + self.norm2.parameters()
            + self.fc1.parameters() + self.fc2.parameters()
        )

    def __call__(self, x: Tensor, rng, grid=None, trace=None) -> Tensor:
        return rsir_block_forward(x, self, rng, grid, trace)


def rsir_block_forward(x: Tensor, block: RsirBlock, rng, grid=None, trace=None) -> Tensor:
    records = [] if trace is not None else None
    attended = rsir_win(block.norm1(x), block.cfg, block.attn, rng, grid, records)
    if trace is not None:
        for r in records:
            trace.append({"layer": block.name, **r})
    x = F.add(x, attended)
    with mac_tag("mlp"):
        h = F.gelu(block.fc1(block.norm2(x)))
        return F.add(x, block.fc2(h))


def patch_embed(image: Tensor, proj: Linear, patch_size: int = 4):
    """Flatten non-overlapping ``p x p`` pixel blocks and project them.

    Returns tokens ``[B, H/p * W/p, C]`` in row-major grid order and the grid.
    Each patch is flattened in (row, column, channel) order.
    """
    b, c, h, w = image.shape
    p = patch_size
    if h % p or w % p:
        raise ValueError(f"image {h}x{w} is not divisible by patch size {p}")
    gh, gw = h // p, w // p
    x = F.reshape(image, (b, c, gh, p, gw, p))
    x = F.transpose(x, (0, 2, 4, 3, 5, 1))
    x = F.reshape(x, (b, gh * gw, p * p * c))
    with mac_tag("embed"):
        return proj(x), (gh, gw)


def patch_merge(tokens: Tensor, grid, proj: Linear):
    """Concatenate each 2x2 token neighbourhood (4C) and project to 2C."""
    b, n, c = tokens.shape
    gh, gw = grid
    if gh * gw != n:
        raise ValueError(f"grid {gh}x{gw} does not match {n} tokens")
    if gh % 2 or gw % 2:
        raise ValueError(f"cannot merge an odd grid {gh}x{gw}")
    x = F.reshape(tokens, (b, gh // 2, 2, gw // 2, 2, c))
    x = F.transpose(x, (0, 1, 3, 2, 4, 5))
    x = F.reshape(x, (b, (gh // 2) * (gw // 2), 4 * c))
    with mac_tag("merge"):
        return proj(x), (gh // 2, gw // 2)


class RsirTransformer(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        stages = config.stages
        windows = config.effective_windows(config.image_size)
        p = config.patch_size
        self.patch_embed = Linear("patch_embed", p * p * config.in_channels, stages[0].dim, rng)
        self.merges: list[Linear] = []
        self.stages: list[list[RsirBlock]] = []
        for i, (st, hidden) in enumerate(zip(stages, config.hidden_dims)):
            if i > 0:
                self.merges.append(Linear(f"merge{i + 1}", 4 * stages[i - 1].dim, st.dim, rng))
            cfg = AttentionConfig(st.dim, st.num_heads, windows[i], config.mechanism)
            self.stages.append(
                [RsirBlock(f"stage{i + 1}.block{j}", cfg, hidden, rng) for j in range(st.depth)]
            )
        self.norm = LayerNorm("norm", stages[-1].dim)
        self.head = Linear("head", stages[-1].dim, config.num_classes, rng)
        self._check_names()

    def modules(self) -> Iterator[Module]:
        yield self.patch_embed
        for i, blocks in enumerate(self.stages):
            if i > 0:
                yield self.merges[i - 1]
            yield from blocks
        yield self.norm
        yield self.head

    def parameters(self) -> list[Parameter]:
        return [p for m in self.modules() for p in m.parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def _check_names(self):
        names = [p.name for p in self.parameters()]
        if len(set(names)) != len(names):
            raise RuntimeError("duplicate parameter names")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, images, rng, trace=None) -> Tensor:
        return forward(images, self, rng, trace)


def forward(images, model: RsirTransformer, rng: np.random.Generator, trace: list | None = None) -> Tensor:
    """Images ``[B, C, H, W]`` to class logits ``[B, num_classes]``."""
    cfg = model.config
    images = images if isinstance(images, Tensor) else Tensor(images)
    if images.ndim != 4 or images.shape[1] != cfg.in_channels:
        raise ValueError(f"expected images [B, {cfg.in_channels}, H, W], got {images.shape}")
    if images.shape[2] != cfg.image_size or images.shape[3] != cfg.image_size:
        raise ValueError(f"model expects {cfg.image_size}x{cfg.image_size} images, got {images.shape[2:]}")
    x, grid = patch_embed(images, model.patch_embed, cfg.patch_size)
    for i, blocks in enumerate(model.stages):
        if i > 0:
            x, grid = patch_merge(x, grid, model.merges[i - 1])
        for block in blocks:
            x = block(x, rng, grid, trace)
    pooled = F.mean(model.norm(x), axis=1)
    with mac_tag("head"):
        return model.head(pooled)


# ---------------------------------------------------------------------------
# accounting
# ---------------------------------------------------------------------------


def _as_config(model) -> ModelConfig:
    return model.config if isinstance(model, RsirTransformer) else model


def param_count(model) -> int:
    """Scalar parameter count of a model or (analytically) of a config."""
    if isinstance(model, RsirTransformer):
        return int(sum(p.size for p in model.parameters()))
    cfg = model
    stages = cfg.stages
    p = cfg.patch_size
    total = p * p * cfg.in_channels * stages[0].dim + stages[0].dim
    for i, (st, hidden) in enumerate(zip(stages, cfg.hidden_dims)):
        c = st.dim
        if i > 0:
            total += 4 * stages[i - 1].dim * c + c
        attn = 4 * c * c + 4 * c
        mlp = c * hidden + hidden + hidden * c + c
        norms = 4 * c
        total += st.depth * (attn + mlp + norms)
    c = stages[-1].dim
    return int(total + 2 * c + c * cfg.num_classes + cfg.num_classes)


def attention_flops(seq_len: int, dim: int, window_size: int, mechanism: str = "rsir") -> dict[str, int]:
    """Multiply-accumulates of one attention layer on ``seq_len`` tokens.

    ``scores`` and ``values`` are ``L * w * C`` for windowed mechanisms and
    ``L * L * C`` for dense attention, where the window is the whole sequence.
    """
    if mechanism not in MECHANISMS:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    w = seq_len if mechanism == "dense" else min(window_size, seq_len)
    if seq_len % w:
        raise ValueError(f"sequence length {seq_len} is not divisible by window size {w}")
    return {
        "qkv": 3 * seq_len * dim * dim,
        "attn_scores": seq_len * w * dim,
        "attn_values": seq_len * w * dim,
        "proj": seq_len * dim * dim,
    }


def flops_breakdown(model, resolution: int | None = None) -> dict[str, int]:
    """Per-image multiply-accumulate counts, keyed like the runtime MAC tags."""
    cfg = _as_config(model)
    resolution = cfg.image_size if resolution is None else resolution
    cfg.check_resolution(resolution)
    tokens = cfg.stage_tokens(resolution)
    windows = cfg.effective_windows(resolution)
    p = cfg.patch_size
    out = dict.fromkeys(("embed", "qkv", "attn_scores", "attn_values", "proj", "mlp", "merge", "head"), 0)
    out["embed"] = tokens[0] * p * p * cfg.in_channels * cfg.stages[0].dim
    for i, (st, hidden) in enumerate(zip(cfg.stages, cfg.hidden_dims)):
        n, c = tokens[i], st.dim
        if i > 0:
            out["merge"] += n * 4 * cfg.stages[i - 1].dim * c
        for key, value in attention_flops(n, c, windows[i], cfg.mechanism).items():
            out[key] += st.depth * value
        out["mlp"] += st.depth * 2 * n * c * hidden
    out["head"] = cfg.stages[-1].dim * cfg.num_classes
    return out


def flops_count(model, resolution: int | None = None) -> int:
    """Per-image FLOPs, counting one multiply-accumulate as one operation.

    Element-wise work (softmax, norms, GELU, residual adds) is not counted.
    """
    return int(sum(flops_breakdown(model, resolution).values()))

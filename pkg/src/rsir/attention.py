"""Window attention with random-sampling (RS) and important-region (IR) windows.

Both window flavours share one pipeline::

    sample map -> plan -> shuffle -> partition -> window MSA -> reverse -> restore

and differ only in where the sample map comes from. :func:`rsir_win` runs
the two flavours side by side on the two halves of the heads and mixes them
with the output projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import functional as F
from .permwin import (
    PermutationPlan,
    SampleMap,
    importance_sample_map,
    plan_from_map,
    restore,
    shuffle,
    uniform_sample_map,
    window_partition,
    window_reverse,
)
from .tensor import Parameter, Tensor, default_dtype, mac_tag

MECHANISMS = ("rsir", "rs", "ir", "dense")


@dataclass(frozen=True)
class AttentionConfig:
    dim: int
    num_heads: int
    window_size: int
    mechanism: str = "rsir"

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown attention mechanism {self.mechanism!r}; choose from {MECHANISMS}")
        if self.num_heads < 1 or self.dim % self.num_heads:
            raise ValueError(f"dim {self.dim} is not divisible by num_heads {self.num_heads}")
        if self.mechanism == "rsir" and self.num_heads % 2:
            raise ValueError(f"RSIR attention splits heads into two equal groups; num_heads={self.num_heads} is odd")
        if self.window_size < 1:
            raise ValueError(f"window_size must be >= 1, got {self.window_size}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads


class GroupProjection(NamedTuple):
    """Q/K/V projection weights ``[C_in, C_g]`` (and optional biases) of one head group."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    bq: Optional[Tensor] = None
    bk: Optional[Tensor] = None
    bv: Optional[Tensor] = None

    @property
    def out_dim(self) -> int:
        return self.wq.shape[1]


class AttentionWeights:
    """Square Q/K/V/output projections shared by both head groups."""

    def __init__(self, wq, wk, wv, wo, bq=None, bk=None, bv=None, bo=None):
        self.wq, self.wk, self.wv, self.wo = wq, wk, wv, wo
        self.bq, self.bk, self.bv, self.bo = bq, bk, bv, bo
        dim = wq.shape[0]
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (dim, dim):
                raise ValueError(f"{name} must be square [{dim}, {dim}], got {getattr(self, name).shape}")

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, prefix: str = "attn", bias: bool = True, std: float = 0.02):
        def w(name):
            return Parameter(_trunc_normal(rng, (dim, dim), std), name=f"{prefix}.{name}")

        def b(name):
            return Parameter(np.zeros(dim), name=f"{prefix}.{name}") if bias else None

        return cls(w("wq"), w("wk"), w("wv"), w("wo"), b("bq"), b("bk"), b("bv"), b("bo"))

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    def parameters(self) -> list[Parameter]:
        names = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
        return [p for p in (getattr(self, n) for n in names) if p is not None]

    def group(self, start: int, stop: int) -> GroupProjection:
        """Projection slice feeding output channels ``[start, stop)``."""
        cols = (slice(None), slice(start, stop))

        def bias(b):
            return None if b is None else F.getitem(b, slice(start, stop))

        if start == 0 and stop == self.dim:
            return GroupProjection(self.wq, self.wk, self.wv, self.bq, self.bk, self.bv)
        return GroupProjection(
            F.getitem(self.wq, cols), F.getitem(self.wk, cols), F.getitem(self.wv, cols),
            bias(self.bq), bias(self.bk), bias(self.bv),
        )


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(default_dtype())


# ---------------------------------------------------------------------------
# core attention
# ---------------------------------------------------------------------------


def scaled_dot_product(q: Tensor, k: Tensor, v: Tensor, num_heads: int) -> Tensor:
    """Multi-head softmax attention inside each row of ``[N, w, C]`` inputs."""
    n, w, c = q.shape
    if c % num_heads:
        raise ValueError(f"channels {c} are not divisible by {num_heads} heads")
    d = c // num_heads

    def heads(t):
        return F.transpose(F.reshape(t, (n, w, num_heads, d)), (0, 2, 1, 3))

    qh, kh, vh = heads(q), heads(k), heads(v)
    with mac_tag("attn_scores"):
        scores = F.matmul(qh, F.transpose(kh, (0, 1, 3, 2)))
    attn = F.softmax(F.mul(scores, 1.0 / math.sqrt(d)), axis=-1)
    with mac_tag("attn_values"):
        out = F.matmul(attn, vh)
    return F.reshape(F.transpose(out, (0, 2, 1, 3)), (n, w, c))


def window_msa(x_windows: Tensor, proj: GroupProjection, num_heads: int) -> Tensor:
    """Project windows ``[N, w, C_in]`` to Q/K/V and attend within each window."""
    if proj.out_dim % num_heads:
        raise ValueError(f"group width {proj.out_dim} is not divisible by {num_heads} heads")
    with mac_tag("qkv"):
        q = F.linear(x_windows, proj.wq, proj.bq)
        k = F.linear(x_windows, proj.wk, proj.bk)
        v = F.linear(x_windows, proj.wv, proj.bv)
    return scaled_dot_product(q, k, v, num_heads)


def _grid(x: Tensor, grid) -> tuple[int, int]:
    return tuple(grid) if grid is not None else (1, x.shape[1])


def _summarise(sample_map: SampleMap) -> dict:
    s = sample_map.scores
    return {"min": float(s.min()), "max": float(s.max()), "mean": float(s.mean()), "std": float(s.std())}


def windowed_attention(
    x: Tensor,
    plan: PermutationPlan,
    proj: GroupProjection,
    num_heads: int,
    window_size: int,
    grid=None,
) -> Tensor:
    """Shared RS/IR pipeline for a given permutation plan."""
    height, width = _grid(x, grid)
    windows = window_partition(shuffle(x, plan), window_size)
    attended = window_msa(windows, proj, num_heads)
    return restore(window_reverse(attended, window_size, height, width), plan)


def _record(trace, group, sample_map, plan, window_size):
    if trace is not None:
        trace.append(
            {
                "head_group": group,
                "sample_map": _summarise(sample_map),
                "ids_shuffle": plan.ids_shuffle.tolist(),
                "window_assignment": plan.window_assignment(window_size).tolist(),
            }
        )


def rs_win_attention(
    x: Tensor,
    proj: GroupProjection,
    num_heads: int,
    window_size: int,
    rng: np.random.Generator,
    grid=None,
    trace: list | None = None,
) -> Tensor:
    """Attention inside windows made of uniformly random token subsets."""
    b, n, _ = x.shape
    sample_map = uniform_sample_map(b, n, rng)
    plan = plan_from_map(sample_map)
    _record(trace, "rs", sample_map, plan, window_size)
    return windowed_attention(x, plan, proj, num_heads, window_size, grid)


def ir_win_attention(
    x: Tensor,
    proj: GroupProjection,
    num_heads: int,
    window_size: int,
    grid=None,
    trace: list | None = None,
) -> Tensor:
    """Attention inside windows of tokens with adjacent channel-mean rank."""
    sample_map = importance_sample_map(x)
    plan = plan_from_map(sample_map)
    _record(trace, "ir", sample_map, plan, window_size)
    return windowed_attention(x, plan, proj, num_heads, window_size, grid)


def dense_msa(x: Tensor, proj: GroupProjection, num_heads: int) -> Tensor:
    """Full attention over the whole sequence (the quadratic reference)."""
    return window_msa(x, proj, num_heads)


def rsir_win(
    x: Tensor,
    cfg: AttentionConfig,
    weights: AttentionWeights,
    rng: np.random.Generator,
    grid=None,
    trace: list | None = None,
) -> Tensor:
    """Attention block output ``concat(heads) @ W_o`` for ``x`` of shape ``[B, L, C]``.

    With the default ``rsir`` mechanism, heads ``0..K/2-1`` (the first C/2
    projection channels) use RS windows and the remaining heads use IR
    windows. ``rs``, ``ir`` and ``dense`` give every head the same treatment
    and exist for ablations and benchmarking.
    """
    if x.ndim != 3 or x.shape[2] != cfg.dim:
        raise ValueError(f"expected input [B, L, {cfg.dim}], got {x.shape}")
    if weights.dim != cfg.dim:
        raise ValueError(f"weights of width {weights.dim} do not match config dim {cfg.dim}")
    c, k, w = cfg.dim, cfg.num_heads, cfg.window_size
    if cfg.mechanism == "rsir":
        half = c // 2
        rs = rs_win_attention(x, weights.group(0, half), k // 2, w, rng, grid, trace)
        ir = ir_win_attention(x, weights.group(half, c), k // 2, w, grid, trace)
        mixed = F.concat([rs, ir], axis=-1)
    elif cfg.mechanism == "rs":
        mixed = rs_win_attention(x, weights.group(0, c), k, w, rng, grid, trace)
    elif cfg.mechanism == "ir":
        mixed = ir_win_attention(x, weights.group(0, c), k, w, grid, trace)
    else:
        mixed = dense_msa(x, weights.group(0, c), k)
    with mac_tag("proj"):
        return F.linear(mixed, weights.wo, weights.bo)

"""Sample maps, permutation plans and window partitions.

A sample map assigns every token a score; sorting the scores gives the order
in which tokens are laid out before being cut into contiguous windows. A
uniform map scatters tokens at random across windows; an importance map
(channel mean of the features) groups tokens of similar importance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import functional as F
from .tensor import Tensor


class SampleOrigin(enum.Enum):
    UNIFORM = "uniform"
    IMPORTANCE = "importance"


@dataclass(frozen=True)
class SampleMap:
    """Per-token ranking scores, shape ``[B, L]``. Never on the gradient tape."""

    scores: np.ndarray
    origin: SampleOrigin

    def __post_init__(self):
        if self.scores.ndim != 2:
            raise ValueError(f"sample map must have shape [B, L], got {self.scores.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("sample map contains non-finite scores")

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape


@dataclass(frozen=True)
class PermutationPlan:
    ids_shuffle: np.ndarray
    ids_restore: np.ndarray

    @property
    def seq_len(self) -> int:
        return self.ids_shuffle.shape[1]

    @classmethod
    def identity(cls, batch: int, seq_len: int) -> "PermutationPlan":
        ids = np.broadcast_to(np.arange(seq_len), (batch, seq_len)).copy()
        return cls(ids, ids.copy())

    def is_valid(self) -> bool:
        s, r = self.ids_shuffle, self.ids_restore
        if s.shape != r.shape or s.ndim != 2:
            return False
        n = s.shape[1]
        if s.size and (min(s.min(), r.min()) < 0 or max(s.max(), r.max()) >= n):
            return False
        # two-sided inverses on a finite set are bijections, so no sort is needed
        offsets = (np.arange(s.shape[0]) * n)[:, None]
        cols = np.arange(n)
        return bool(
            (s.reshape(-1)[r + offsets] == cols).all() and (r.reshape(-1)[s + offsets] == cols).all()
        )

    def window_assignment(self, window_size: int) -> np.ndarray:
        """Window index of every original token position, shape ``[B, L]``."""
        return self.ids_restore // window_size


@dataclass(frozen=True)
class WindowLayout:
    window_size: int
    seq_len: int
    spatial: tuple[int, int]

    def __post_init__(self):
        h, w = self.spatial
        if h * w != self.seq_len:
            raise ValueError(f"grid {h}x{w} does not hold {self.seq_len} tokens")
        if self.window_size < 1 or self.seq_len % self.window_size:
            raise ValueError(
                f"sequence length {self.seq_len} is not divisible by window size {self.window_size}"
            )

    @property
    def num_windows(self) -> int:
        return self.seq_len // self.window_size


def uniform_sample_map(batch: int, seq_len: int, rng: np.random.Generator) -> SampleMap:
    if batch < 1 or seq_len < 1:
        raise ValueError(f"batch and seq_len must be >= 1, got {batch} and {seq_len}")
    return SampleMap(rng.random((batch, seq_len)), SampleOrigin.UNIFORM)


def importance_sample_map(x: Tensor | np.ndarray) -> SampleMap:
    """Channel-mean score of each token of ``x`` (``[B, L, C]``), detached."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if data.ndim != 3:
        raise ValueError(f"expected features of shape [B, L, C], got {data.shape}")
    if np.isnan(data).any():
        raise ValueError("importance map undefined: input contains NaN")
    return SampleMap(data.mean(axis=2), SampleOrigin.IMPORTANCE)


def plan_from_map(sample_map: SampleMap) -> PermutationPlan:
    # stable sort: ties keep their original order
    ids_shuffle = np.argsort(sample_map.scores, axis=1, kind="stable")
    return PermutationPlan(ids_shuffle, _invert(ids_shuffle))


def _invert(perm: np.ndarray) -> np.ndarray:
    # same result as argsort(perm, axis=1) for permutation rows, in linear time
    b, n = perm.shape
    inv = np.empty_like(perm)
    np.put_along_axis(inv, perm, np.broadcast_to(np.arange(n), (b, n)), axis=1)
    return inv


def _check_plan(x: Tensor, plan: PermutationPlan) -> None:
    if x.ndim != 3:
        raise ValueError(f"expected tokens of shape [B, L, C], got {x.shape}")
    if plan.ids_shuffle.shape != x.shape[:2]:
        raise ValueError(f"plan of shape {plan.ids_shuffle.shape} does not fit tokens {x.shape}")


def shuffle(x: Tensor, plan: PermutationPlan) -> Tensor:
    _check_plan(x, plan)
    return F.gather(x, plan.ids_shuffle, axis=1)


def restore(x: Tensor, plan: PermutationPlan) -> Tensor:
    _check_plan(x, plan)
    return F.gather(x, plan.ids_restore, axis=1)


def window_partition(x: Tensor, window_size: int) -> Tensor:
    """``[B, L, C]`` -> ``[B * L / w, w, C]``, batch-major, windows in order."""
    if x.ndim != 3:
        raise ValueError(f"expected tokens of shape [B, L, C], got {x.shape}")
    b, n, c = x.shape
    if window_size < 1 or n % window_size:
        raise ValueError(f"sequence length L={n} is not divisible by window size w={window_size}")
    return F.reshape(x, (b * (n // window_size), window_size, c))


def window_reverse(windows: Tensor, window_size: int, height: int, width: int) -> Tensor:
    if windows.ndim != 3 or windows.shape[1] != window_size:
        raise ValueError(f"windows of shape {windows.shape} do not have window size {window_size}")
    n = height * width
    if n % window_size:
        raise ValueError(f"grid {height}x{width} ({n} tokens) is not divisible by window size {window_size}")
    per_row = n // window_size
    if windows.shape[0] % per_row:
        raise ValueError(
            f"{windows.shape[0]} windows cannot be split into rows of {per_row} windows ({height}x{width} grid)"
        )
    return F.reshape(windows, (windows.shape[0] // per_row, n, windows.shape[2]))

"""Attention cost sweep over sequence length.

FLOP columns come from :func:`rsir.backbone.attention_flops`, the same
function that backs :func:`rsir.backbone.flops_count`.
"""

from __future__ import annotations

import csv
import statistics
import time
import tracemalloc
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from ..attention import AttentionConfig, AttentionWeights, rsir_win
from ..backbone import ModelConfig, attention_flops
from ..tensor import Tensor, no_grad, precision

BENCH_MECHANISMS = {"dense": "dense", "rs_win": "rs", "ir_win": "ir", "rsir": "rsir"}
BENCH_COLUMNS = ("L", "mechanism", "flops", "score_flops", "wall_ms", "peak_bytes")


@dataclass(frozen=True)
class BenchRow:
    L: int
    mechanism: str
    flops: int
    score_flops: int
    wall_ms: float
    peak_bytes: int


def layer_config(model_config: ModelConfig, seq_len: int, mechanism: str) -> AttentionConfig:
    """First-stage attention layer of ``model_config`` applied to ``seq_len`` tokens."""
    stage = model_config.stages[0]
    inner = BENCH_MECHANISMS[mechanism]
    window = seq_len if inner == "dense" else min(stage.window_size, seq_len)
    return AttentionConfig(stage.dim, stage.num_heads, window, inner)


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)


def bench(
    model_config: ModelConfig,
    lengths: Iterable[int] = (64, 256, 1024, 4096),
    mechanisms: Iterable[str] = tuple(BENCH_MECHANISMS),
    repeats: int = 3,
    timed: bool = True,
    seed: int = 0,
) -> list[BenchRow]:
    rows = []
    for mech in mechanisms:
        if mech not in BENCH_MECHANISMS:
            raise ValueError(f"unknown mechanism {mech!r}; choose from {sorted(BENCH_MECHANISMS)}")
    for n in lengths:
        for mech in mechanisms:
            cfg = layer_config(model_config, n, mech)
            costs = attention_flops(n, cfg.dim, cfg.window_size, cfg.mechanism)
            wall_ms, peak = float("nan"), 0
            if timed:
                wall_ms, peak = _time_layer(cfg, n, repeats, seed)
            rows.append(BenchRow(n, mech, sum(costs.values()), costs["attn_scores"], wall_ms, peak))
    return rows


def _time_layer(cfg: AttentionConfig, seq_len: int, repeats: int, seed: int) -> tuple[float, int]:
    with precision(np.float32), no_grad():
        rng = np.random.default_rng(seed)
        weights = AttentionWeights.init(cfg.dim, rng)
        x = Tensor(rng.standard_normal((1, seq_len, cfg.dim)))
        times = []
        tracemalloc.start()
        try:
            for _ in range(max(1, repeats)):
                tic = time.perf_counter()
                rsir_win(x, cfg, weights, rng)
                times.append((time.perf_counter() - tic) * 1e3)
            _, peak = tracemalloc.get_traced_memory()
        finally:
            tracemalloc.stop()
    return statistics.median(times), peak


def write_bench_csv(path, rows: Sequence[BenchRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))

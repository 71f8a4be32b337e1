import csv

import numpy as np
import pytest

from rsir.attention import AttentionWeights, rsir_win
from rsir.backbone import ModelConfig, attention_flops
from rsir.harness.bench import bench, fit_loglog_slope, layer_config, write_bench_csv
from rsir.tensor import Tensor, count_macs, no_grad


def _scores(rows, mech):
    return {r.L: r.score_flops for r in rows if r.mechanism == mech}


def test_score_flop_ratios():
    rows = bench(ModelConfig.desk(), (256, 1024), timed=False)
    dense, rsir = _scores(rows, "dense"), _scores(rows, "rsir")
    assert dense[1024] == 16 * dense[256]
    assert rsir[1024] == 4 * rsir[256]


def test_loglog_slopes():
    lengths = (64, 256, 1024, 4096)
    rows = bench(ModelConfig.desk(), lengths, timed=False)
    for mech, target in (("rsir", 1.0), ("rs_win", 1.0), ("ir_win", 1.0), ("dense", 2.0)):
        s = _scores(rows, mech)
        assert abs(fit_loglog_slope(lengths, [s[n] for n in lengths]) - target) < 1e-9


def test_fit_slope_oracle():
    xs = np.array([1.0, 10.0, 100.0])
    assert fit_loglog_slope(xs, 3 * xs**1.5) == pytest.approx(1.5)


@pytest.mark.parametrize("mech", ["dense", "rs_win", "ir_win", "rsir"])
def test_bench_flops_match_runtime_counter(mech):
    cfg = layer_config(ModelConfig.desk(), 64, mech)
    rng = np.random.default_rng(0)
    weights = AttentionWeights.init(cfg.dim, rng)
    with no_grad(), count_macs() as counter:
        rsir_win(Tensor(rng.standard_normal((1, 64, cfg.dim))), cfg, weights, rng)
    row = bench(ModelConfig.desk(), (64,), (mech,), timed=False)[0]
    assert counter.total == row.flops
    assert counter.by_tag["attn_scores"] == row.score_flops
    assert row.flops == sum(attention_flops(64, cfg.dim, cfg.window_size, cfg.mechanism).values())


def test_timed_bench_and_csv(tmp_path):
    rows = bench(ModelConfig.desk(), (16, 64), ("dense", "rsir"), repeats=2)
    assert all(r.wall_ms > 0 and r.peak_bytes > 0 for r in rows)
    write_bench_csv(tmp_path / "b.csv", rows)
    with open(tmp_path / "b.csv") as fh:
        read = list(csv.DictReader(fh))
    assert list(read[0]) == ["L", "mechanism", "flops", "score_flops", "wall_ms", "peak_bytes"]
    assert len(read) == 4 and int(read[1]["flops"]) == rows[1].flops


def test_unknown_mechanism():
    with pytest.raises(ValueError, match="unknown"):
        bench(ModelConfig.desk(), (64,), ("swin",), timed=False)

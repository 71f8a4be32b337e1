"""
Cost against sequence length
============================

Counted multiply-accumulates of the attention scores, for windowed and
dense attention. Windowed cost grows with L, dense cost with L squared.
"""

# %%
import numpy as np

from rsir.backbone import ModelConfig, flops_breakdown, flops_count, param_count
from rsir.harness.bench import bench, fit_loglog_slope

lengths = (64, 256, 1024, 4096)
rows = bench(ModelConfig.desk(), lengths, timed=False)

# %%
for mech in ("dense", "rsir"):
    scores = [r.score_flops for r in rows if r.mechanism == mech]
    print(f"{mech:6s}", scores, "slope", round(fit_loglog_slope(lengths, scores), 3))

# %% whole-model budgets
for name in ("rsir-t", "rsir-b"):
    cfg = ModelConfig.preset(name)
    print(f"{name}: {param_count(cfg) / 1e6:.2f}M params, {flops_count(cfg) / 1e9:.2f} GMAC at 224")

# %% where the desk model spends its multiply-accumulates
for k, v in flops_breakdown(ModelConfig.desk()).items():
    print(f"{k:12s}{v:>10,d}")
print("params", param_count(ModelConfig.desk()))

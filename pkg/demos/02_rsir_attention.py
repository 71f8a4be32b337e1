"""
Two head groups
===============

Half the heads attend inside random windows, the other half inside
importance windows, and the output projection mixes them. With one window
covering the whole sequence both groups reduce to ordinary attention.
"""

# %%
import numpy as np

from rsir.attention import AttentionConfig, AttentionWeights, rsir_win
from rsir.tensor import Tensor, precision

rng = np.random.default_rng(1)
C, K, L = 16, 4, 16

# %% a layer with windows of 4 tokens; the trace shows both groupings
with precision(np.float64):
    weights = AttentionWeights.init(C, rng)
    x = Tensor(rng.standard_normal((1, L, C)))
    trace = []
    y = rsir_win(x, AttentionConfig(C, K, 4), weights, rng, trace=trace)
print("output", y.shape)
for rec in trace:
    print(rec["head_group"], "window of each token:", rec["window_assignment"][0])

# %% one global window: the random grouping no longer matters
with precision(np.float64):
    cfg = AttentionConfig(C, K, L)
    a = rsir_win(x, cfg, weights, np.random.default_rng(10)).data
    b = rsir_win(x, cfg, weights, np.random.default_rng(11)).data
print("global windows, two seeds, max diff:", np.abs(a - b).max())

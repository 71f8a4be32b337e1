"""
Permutation windows
===================

Windows here are not spatial squares. A score per token decides the order,
the sorted sequence is cut into runs of ``w`` tokens, and every run is an
attention window. Random scores scatter tokens across the image; channel
means group tokens of similar magnitude.
"""

# %%
import numpy as np

from rsir.permwin import (
    importance_sample_map,
    plan_from_map,
    restore,
    shuffle,
    uniform_sample_map,
    window_partition,
)
from rsir.tensor import Tensor

rng = np.random.default_rng(0)

# %% a 4x4 token grid, windows of 4 tokens
H = W = 4
w = 4
plan = plan_from_map(uniform_sample_map(1, H * W, rng))
print("random windows on the grid:")
print(plan.window_assignment(w)[0].reshape(H, W))

# %% the same grid with importance windows: token i has channel mean i mod 5
x = np.zeros((1, H * W, 2))
x[0, :, :] = (np.arange(H * W) % 5)[:, None]
plan = plan_from_map(importance_sample_map(x))
print("importance windows (ties keep grid order):")
print(plan.window_assignment(w)[0].reshape(H, W))

# %% shuffle, cut, and undo: the round trip is exact
tokens = Tensor(rng.standard_normal((1, H * W, 3)))
windows = window_partition(shuffle(tokens, plan), w)
print("windows tensor:", windows.shape)
back = restore(shuffle(tokens, plan), plan)
print("restore(shuffle(x)) == x:", np.array_equal(back.data, tokens.data))

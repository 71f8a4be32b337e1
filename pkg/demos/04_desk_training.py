"""
Training at desk scale
======================

The desk model (32x32 inputs, four small stages) on the two-blobs task.
One class has a single Gaussian blob, the other two, so a few epochs are
enough. The run writes metrics.csv and checkpoints under ``runs/demo``.
"""

# %%
from rsir.backbone import ModelConfig
from rsir.harness import RunConfig, train
from rsir.harness.inspect_dump import inspect_checkpoint

run = RunConfig(seed=0, epochs=30, warmup_epochs=2, train_data="synthetic:two-blobs")
result = train(run, ModelConfig.desk(num_classes=2), "runs/demo", stop_after=5)

# %%
for row in result.rows:
    print(f"epoch {row.epoch} {row.split:5s} loss {row.loss:.4f} top1 {row.top1:.3f}")

# %% pick up where we stopped for one more epoch
more = train(run, ModelConfig.desk(num_classes=2), "runs/demo", resume=result.checkpoint, stop_after=6)
print(f"after resume: epoch {more.final.epoch} eval top1 {more.final.top1:.3f}")

# %% which tokens shared a window in the first layer
import numpy as np

np.save("runs/demo/blank.npy", np.zeros((3, 32, 32), dtype=np.float32))
dump = inspect_checkpoint(more.checkpoint, "runs/demo/blank.npy")
first = dump["records"][:2]
for rec in first:
    print(rec["layer"], rec["head_group"], rec["window_assignment"][0][:16], "...")

"""Training, evaluation, benchmarking and inspection around the RSIR backbone."""

from .bench import BenchRow, bench, fit_loglog_slope
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_run_file
from .data import Dataset, load_dataset, read_idx, write_idx
from .optim import AdamW, adamw_step, cosine_lr
from .train import MetricsRow, evaluate, train

"""Desk-scale training loop with resumable checkpoints and CSV metrics."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import functional as F
from ..backbone import ModelConfig, RsirTransformer
from ..tensor import Tensor, no_grad, precision
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import Dataset, load_dataset
from .optim import AdamW, cosine_lr

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("epoch", "split", "loss", "top1", "lr")
TIMING_COLUMNS = ("epoch", "split", "wall_seconds")


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    split: str
    loss: float
    top1: float
    lr: float
    wall_seconds: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.top1 <= 1.0:
            raise ValueError(f"top1 must lie in [0, 1], got {self.top1}")


@dataclass
class TrainResult:
    final: MetricsRow
    rows: list[MetricsRow]
    checkpoint: Path
    out_dir: Path


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads:
            g *= scale
    return norm


def evaluate(model: RsirTransformer, data: Dataset, batch_size: int, rng: np.random.Generator) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy over ``data``."""
    total_loss, correct = 0.0, 0
    with no_grad():
        for images, labels in data.batches(batch_size):
            logits = model(Tensor(images), rng)
            total_loss += F.cross_entropy(logits, labels).item() * len(labels)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
    return total_loss / len(data), correct / len(data)


def _write_rows(path: Path, columns, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [
            MetricsRow(int(r["epoch"]), r["split"], float(r["loss"]), float(r["top1"]), float(r["lr"]))
            for r in csv.DictReader(fh)
        ]


def _row_dict(row: MetricsRow) -> dict:
    d = asdict(row)
    for key in ("loss", "top1", "lr"):
        d[key] = repr(float(d[key]))
    return d


def train(
    run: RunConfig,
    model_config: ModelConfig,
    out_dir=None,
    resume=None,
    stop_after: int | None = None,
) -> TrainResult:
    """Train from scratch (or resume) and write metrics and checkpoints to ``out_dir``.

    ``stop_after`` ends the run after that epoch as if interrupted; the
    schedule still spans ``run.epochs``.
    """
    out = Path(out_dir or run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with precision(np.float32):
        return _train(run, model_config, out, resume, stop_after)


def _train(run, model_config, out, resume, stop_after):
    train_raw = load_dataset(run.train_data, model_config.image_size)
    if train_raw.num_classes > model_config.num_classes:
        raise ValueError(f"dataset has {train_raw.num_classes} classes, model only {model_config.num_classes}")
    stats = train_raw.channel_stats()
    train_set = train_raw.normalized(stats)
    eval_set = load_dataset(run.eval_spec, model_config.image_size).normalized(stats)

    model = RsirTransformer(model_config, np.random.default_rng([run.seed, 0]))
    optimizer = AdamW(run.base_lr, run.weight_decay, run.betas, run.eps)
    train_rng = np.random.default_rng([run.seed, 1])
    named = model.named_parameters()
    decay = {n for n, p in named.items() if p.ndim >= 2}

    steps_per_epoch = math.ceil(len(train_set) / run.batch_size)
    total_steps = run.epochs * steps_per_epoch
    warmup_steps = run.warmup_epochs * steps_per_epoch

    start_epoch, rows, timings = 0, [], []
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.model_config != model_config:
            raise ValueError("checkpoint model config differs from the requested model config")
        ckpt.load_into(model, optimizer)
        train_rng.bit_generator.state = ckpt.header["rng_state"]
        start_epoch = ckpt.epoch
        metrics_path = out / "metrics.csv"
        if metrics_path.exists():
            rows = [r for r in read_metrics(metrics_path) if r.epoch <= start_epoch]
            rows = [_row_dict(r) for r in rows]
        timing_path = out / "timing.csv"
        if timing_path.exists():
            with open(timing_path, newline="") as fh:
                timings = [r for r in csv.DictReader(fh) if int(r["epoch"]) <= start_epoch]
        log.info("resumed from %s at epoch %d", resume, start_epoch)

    extra = {"norm_stats": {"mean": stats[0].tolist(), "std": stats[1].tolist()}}
    last_ckpt = out / "checkpoints" / "last.ckpt"
    last_row = None
    end_epoch = run.epochs if stop_after is None else min(run.epochs, stop_after)

    for epoch in range(start_epoch + 1, end_epoch + 1):
        tic = time.perf_counter()
        loss_sum, correct, seen = 0.0, 0, 0
        lr = 0.0
        for i, (images, labels) in enumerate(train_set.batches(run.batch_size, seed=run.seed, epoch=epoch)):
            step = (epoch - 1) * steps_per_epoch + i
            lr = cosine_lr(step, total_steps, warmup_steps, run.base_lr)
            if run.hflip:
                flip = train_rng.random(len(labels)) < 0.5
                images = np.where(flip[:, None, None, None], images[..., ::-1], images)
            logits = model(Tensor(images), train_rng)
            loss = F.cross_entropy(logits, labels)
            if not np.isfinite(loss.item()):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch} step {i}; last good checkpoint: {last_ckpt}"
                )
            model.zero_grad()
            loss.backward()
            if run.grad_clip:
                clip_grad_norm(named.values(), run.grad_clip)
            optimizer.step(named, lr, decay)
            loss_sum += loss.item() * len(labels)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
            seen += len(labels)
        train_seconds = time.perf_counter() - tic

        tic = time.perf_counter()
        eval_rng = np.random.default_rng(run.eval_seed if run.eval_seed is not None else [run.seed, 2])
        eval_loss, eval_top1 = evaluate(model, eval_set, run.batch_size, eval_rng)
        eval_seconds = time.perf_counter() - tic

        train_row = MetricsRow(epoch, "train", loss_sum / seen, correct / seen, lr, train_seconds)
        last_row = MetricsRow(epoch, "eval", eval_loss, eval_top1, lr, eval_seconds)
        rows += [_row_dict(train_row), _row_dict(last_row)]
        timings += [asdict(train_row), asdict(last_row)]
        _write_rows(out / "metrics.csv", METRICS_COLUMNS, rows)
        _write_rows(out / "timing.csv", TIMING_COLUMNS, timings)
        log.info("epoch %d: train loss %.4f top1 %.3f | eval loss %.4f top1 %.3f",
                 epoch, train_row.loss, train_row.top1, eval_loss, eval_top1)

        if epoch % run.checkpoint_every == 0 or epoch == end_epoch:
            kwargs = dict(optimizer=optimizer, epoch=epoch, rng_state=train_rng.bit_generator.state,
                          run_config=run.to_dict(), extra=extra)
            save_checkpoint(out / "checkpoints" / f"epoch_{epoch:04d}.ckpt", model, **kwargs)
            save_checkpoint(last_ckpt, model, **kwargs)

    all_rows = read_metrics(out / "metrics.csv")
    final = last_row or next((r for r in reversed(all_rows) if r.split == "eval"), None)
    return TrainResult(final, all_rows, last_ckpt, out)

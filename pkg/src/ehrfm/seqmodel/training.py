"""Next-token pretraining loop."""

from __future__ import annotations

import copy
import csv
import dataclasses
import logging
import math
import os

import numpy as np
import torch

from ..tokenizer import Batch, pack_sequences
from .model import DecoderLM, ModelConfig, init_model, nll_loss

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Raised when a loss becomes non-finite."""


@dataclasses.dataclass(frozen=True)
class TrainSchedule:
    lr: float = 3e-4
    warmup_steps: int = 50
    epochs: int = 1
    max_steps: int | None = None
    batch_size: int = 16
    block_len: int = 256
    pad_gap_max: int = 8
    weight_decay: float = 0.0
    clip_norm: float | None = 1.0
    min_lr_ratio: float = 0.1
    checkpoint_every: int = 0
    seed: int = 0

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def lr_factor(step: int, warmup: int, total: int, min_ratio: float = 0.1) -> float:
    """Linear warm-up to 1, then cosine decay to ``min_ratio`` at ``total`` steps."""
    if warmup > 0 and step < warmup:
        return (step + 1) / warmup
    if total <= warmup:
        return 1.0
    progress = min(1.0, (step - warmup) / max(1, total - warmup))
    return min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + math.cos(math.pi * progress))


class OptimState:
    """Adam moments, step count and learning-rate schedule for one parameter set."""

    def __init__(self, params, lr: float, warmup_steps: int = 0, total_steps: int = 0,
                 weight_decay: float = 0.0, clip_norm: float | None = None,
                 min_lr_ratio: float = 0.1):
        self.params = [p for p in params if p.requires_grad]
        self.base_lr = lr
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.min_lr_ratio = min_lr_ratio
        self.clip_norm = clip_norm
        self.optimizer = torch.optim.AdamW(self.params, lr=lr, weight_decay=weight_decay)
        self.step = 0

    @property
    def lr(self) -> float:
        return self.base_lr * lr_factor(self.step, self.warmup_steps, self.total_steps,
                                        self.min_lr_ratio)

    def apply(self, loss: torch.Tensor) -> None:
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.clip_norm is not None:
            torch.nn.utils.clip_grad_norm_(self.params, self.clip_norm)
        for group in self.optimizer.param_groups:
            group["lr"] = self.lr
        self.optimizer.step()
        self.step += 1


def _check_finite(loss: torch.Tensor, step: int) -> None:
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss.item()} at step {step}")


def train_step(model: DecoderLM, opt_state: OptimState, batch: Batch) -> float:
    """One update on a packed batch; returns the loss before the update."""
    model.train()
    tokens = torch.as_tensor(batch.tokens, dtype=torch.long)
    logits, _ = model(tokens)
    loss = nll_loss(logits, batch.targets, batch.loss_mask)
    _check_finite(loss, opt_state.step)
    opt_state.apply(loss)
    return float(loss.detach())


@torch.no_grad()
def evaluate_nll(model: DecoderLM, batches) -> float:
    """Token-weighted mean NLL over packed batches."""
    model.eval()
    total, count = 0.0, 0
    for batch in batches:
        tokens = torch.as_tensor(batch.tokens, dtype=torch.long)
        logits, _ = model(tokens)
        n = int(np.asarray(batch.loss_mask).sum())
        if n == 0:
            continue
        total += float(nll_loss(logits, batch.targets, batch.loss_mask)) * n
        count += n
    return total / count if count else float("nan")


def unigram_entropy(timelines) -> float:
    """Entropy (nats) of the empirical token distribution of a corpus."""
    counts = np.bincount(np.concatenate([np.asarray(t.tokens) for t in timelines]))
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


@dataclasses.dataclass
class PretrainResult:
    model: DecoderLM
    log: list[dict]
    checkpoints: list[tuple[int, dict]]
    val_nll: float


def pretrain(train_timelines, config: ModelConfig, schedule: TrainSchedule,
             val_timelines=None, on_checkpoint=None) -> PretrainResult:
    """Next-token training on packed timelines.

    Each epoch reshuffles the timelines and redraws the PAD gaps. With
    ``checkpoint_every`` > 0 a copy of the state dict is kept (and passed to
    ``on_checkpoint``) every that many steps.
    """
    if not len(train_timelines):
        raise ValueError("empty pretraining corpus")
    rng = np.random.default_rng(schedule.seed)
    model = init_model(config)
    val_batches = None
    if val_timelines:
        val_batches = pack_sequences(val_timelines, schedule.block_len, schedule.pad_gap_max,
                                     np.random.default_rng(schedule.seed + 1),
                                     batch_size=schedule.batch_size)

    stream_len = sum(len(t) for t in train_timelines) + len(train_timelines) * schedule.pad_gap_max / 2
    steps_per_epoch = max(1, math.ceil(stream_len / schedule.block_len / schedule.batch_size))
    total = steps_per_epoch * schedule.epochs
    if schedule.max_steps is not None:
        total = min(total, schedule.max_steps)
    opt = OptimState(model.parameters(), schedule.lr, schedule.warmup_steps, total,
                     schedule.weight_decay, schedule.clip_norm, schedule.min_lr_ratio)

    records, checkpoints = [], []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(schedule.seed)
        done = opt.step >= total
        for epoch in range(schedule.epochs):
            if done:
                break
            order = rng.permutation(len(train_timelines))
            batches = pack_sequences([train_timelines[i] for i in order], schedule.block_len,
                                     schedule.pad_gap_max, rng, batch_size=schedule.batch_size)
            for batch in batches:
                if not np.asarray(batch.loss_mask).any():
                    continue
                lr = opt.lr
                loss = train_step(model, opt, batch)
                records.append({"step": opt.step, "lr": lr, "train_nll": loss, "val_nll": None})
                if schedule.checkpoint_every and opt.step % schedule.checkpoint_every == 0:
                    state = copy.deepcopy(model.state_dict())
                    checkpoints.append((opt.step, state))
                    if on_checkpoint is not None:
                        on_checkpoint(opt.step, model)
                if opt.step >= total:
                    done = True
                    break
            if val_batches is not None and records:
                records[-1]["val_nll"] = evaluate_nll(model, val_batches)
                log.info("epoch %d step %d val_nll %.4f", epoch, opt.step, records[-1]["val_nll"])

    val = evaluate_nll(model, val_batches) if val_batches is not None else float("nan")
    if records:
        records[-1]["val_nll"] = val
    model.eval()
    return PretrainResult(model, records, checkpoints, val)


LOG_FIELDS = ("step", "lr", "train_nll", "val_nll")


def write_training_log(records, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for rec in records:
            writer.writerow({k: ("" if rec.get(k) is None else rec[k]) for k in LOG_FIELDS})

"""Hidden-state extraction from a trained model."""

from __future__ import annotations

import numpy as np
import torch

from ..tokenizer import PAD
from .model import DecoderLM


def length_batches(lengths, batch_size: int, max_tokens: int | None = None):
    """Index batches of similar length, in ascending length order."""
    order = np.argsort(np.asarray(lengths), kind="stable")
    batch: list[int] = []
    for i in order:
        longest = lengths[i]
        if batch and (len(batch) >= batch_size or
                      (max_tokens and (len(batch) + 1) * longest > max_tokens)):
            yield batch
            batch = []
        batch.append(int(i))
    if batch:
        yield batch


def _check_nonempty(timelines):
    for tl in timelines:
        if len(tl) < 1:
            raise ValueError(f"timeline {tl.hospitalization_id} is empty")


@torch.no_grad()
def hidden_states(model: DecoderLM, timelines, batch_size: int = 32, max_tokens: int = 32768):
    """Yield (index, hidden matrix n_i x d_model) for every timeline."""
    model.eval()
    lengths = [len(t) for t in timelines]
    for idx, tokens in _right_padded(timelines, lengths, batch_size, max_tokens):
        _, hidden = model(tokens)
        hidden = hidden.double().numpy()
        for row, i in enumerate(idx):
            yield i, hidden[row, :lengths[i]]


@torch.no_grad()
def encode(model: DecoderLM, timelines, batch_size: int = 32, max_tokens: int = 32768) -> np.ndarray:
    """Final-layer hidden state at the last token of every timeline (rows x d_model)."""
    model.eval()
    out = np.zeros((len(timelines), model.config.d_model))
    lengths = np.array([len(t) for t in timelines], dtype=np.int64)
    for idx, tokens in _right_padded(timelines, lengths, batch_size, max_tokens):
        _, hidden = model(tokens)
        out[idx] = hidden[np.arange(len(idx)), lengths[idx] - 1].double().numpy()
    return out


def _right_padded(timelines, lengths, batch_size, max_tokens):
    """Length-sorted batches padded at the end.

    Causal attention never looks right, so trailing PAD leaves every real
    position exactly as in an unpadded pass and positions start at 0. This
    matches the left-padded masked forward and runs on the faster causal kernel.
    """
    _check_nonempty(timelines)
    for idx in length_batches(lengths, batch_size, max_tokens):
        width = max(lengths[i] for i in idx)
        tokens = np.full((len(idx), width), PAD, dtype=np.int64)
        for row, i in enumerate(idx):
            tokens[row, :lengths[i]] = timelines[i].tokens
        yield idx, torch.as_tensor(tokens)


def extract_representation(model: DecoderLM, timeline) -> np.ndarray:
    return encode(model, [timeline])[0]


def extract_trajectory(model: DecoderLM, timeline) -> np.ndarray:
    """Row t is the hidden state after reading the first t+1 tokens."""
    return next(hidden_states(model, [timeline]))[1]


@torch.no_grad()
def extract_trajectory_incremental(model: DecoderLM, timeline) -> np.ndarray:
    """Same as :func:`extract_trajectory`, one forward pass per prefix."""
    _check_nonempty([timeline])
    model.eval()
    rows = []
    for t in range(1, len(timeline) + 1):
        _, hidden = model(torch.as_tensor(timeline.tokens[None, :t]))
        rows.append(hidden[0, -1].double().numpy())
    return np.stack(rows)

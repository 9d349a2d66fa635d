"""Batch construction: packed pretraining blocks and left-padded classifier batches."""

from __future__ import annotations

import dataclasses

import numpy as np

from ..clif import OUTCOMES
from .vocab import PAD


@dataclasses.dataclass
class Batch:
    """Token matrix plus masks.

    ``mask`` is 0 exactly on PAD positions. Packed batches carry next-token
    ``targets`` and a ``loss_mask``; left-padded batches carry per-row ``labels``.
    """

    tokens: np.ndarray
    mask: np.ndarray
    targets: np.ndarray | None = None
    loss_mask: np.ndarray | None = None
    labels: np.ndarray | None = None
    boundaries: list[np.ndarray] | None = None
    ids: list[str] | None = None

    def __len__(self) -> int:
        return int(self.tokens.shape[0])


def pack_stream(timelines, pad_gap_max: int, rng: np.random.Generator):
    """Concatenate timelines with random PAD runs between them.

    Returns the stream and the start offset of every timeline in it.
    """
    if pad_gap_max < 0:
        raise ValueError("pad_gap_max must be non-negative")
    pieces, starts = [], []
    pos = 0
    for i, tl in enumerate(timelines):
        if i > 0:
            gap = int(rng.integers(0, pad_gap_max + 1))
            if gap:
                pieces.append(np.full(gap, PAD, dtype=np.int64))
                pos += gap
        starts.append(pos)
        pieces.append(np.asarray(tl.tokens, dtype=np.int64))
        pos += len(tl)
    stream = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)
    return stream, np.asarray(starts, dtype=np.int64)


def pack_sequences(timelines, block_len: int, pad_gap_max: int, rng: np.random.Generator,
                   batch_size: int | None = None) -> list[Batch]:
    """Pack timelines into contiguous blocks of ``block_len`` tokens.

    Timelines may run across block boundaries. The last block is filled with
    PAD. Targets are the block shifted left by one; targets that are PAD (and
    the final position of each block, which has no successor inside the block)
    are excluded by ``loss_mask``.
    """
    if block_len < 2:
        raise ValueError("block_len must be at least 2")
    stream, starts = pack_stream(timelines, pad_gap_max, rng)
    n_blocks = -(-stream.size // block_len)
    padded = np.full(n_blocks * block_len, PAD, dtype=np.int64)
    padded[:stream.size] = stream
    blocks = padded.reshape(n_blocks, block_len)
    targets = np.full_like(blocks, PAD)
    targets[:, :-1] = blocks[:, 1:]
    loss_mask = targets != PAD
    boundaries = [starts[(starts >= b * block_len) & (starts < (b + 1) * block_len)] - b * block_len
                  for b in range(n_blocks)]

    size = batch_size or max(n_blocks, 1)
    out = []
    for lo in range(0, n_blocks, size):
        sl = slice(lo, lo + size)
        out.append(Batch(
            tokens=blocks[sl],
            mask=(blocks[sl] != PAD).astype(np.int64),
            targets=targets[sl],
            loss_mask=loss_mask[sl],
            boundaries=boundaries[sl],
        ))
    return out


def left_pad_batch(timelines, max_len: int, outcome: str | None = None) -> Batch:
    """Stack timelines right-aligned, PAD on the left.

    With ``outcome`` (an evaluated outcome name or a label column) the batch
    carries that label per row as float 0/1.
    """
    rows = np.full((len(timelines), max_len), PAD, dtype=np.int64)
    for r, tl in enumerate(timelines):
        n = len(tl)
        if n > max_len:
            raise ValueError(f"timeline {tl.hospitalization_id} has {n} tokens > max_len {max_len}")
        if n:
            rows[r, max_len - n:] = tl.tokens
    mask = np.zeros_like(rows)
    for r, tl in enumerate(timelines):
        if len(tl):
            mask[r, max_len - len(tl):] = 1
    labels = None
    if outcome is not None:
        column = OUTCOMES[outcome][0] if outcome in OUTCOMES else outcome
        labels = np.array([float(tl.labels[column]) for tl in timelines], dtype=np.float64)
    return Batch(tokens=rows, mask=mask, labels=labels,
                 ids=[tl.hospitalization_id for tl in timelines])

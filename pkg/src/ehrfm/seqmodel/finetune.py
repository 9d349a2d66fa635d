"""Classification-head fine-tuning and outcome prediction."""

from __future__ import annotations

import copy
import logging
import math
import warnings

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..analytics.metrics import safe_auc
from ..clif import OUTCOMES
from ..tokenizer import left_pad_batch, uniform_random_truncate
from .inference import encode, hidden_states
from .model import DecoderLM
from .training import NumericalError, OptimState

log = logging.getLogger(__name__)

FINETUNE_LR = 2e-5
MODES = ("plain", "urt")


def outcome_labels(timelines, outcome: str) -> tuple[np.ndarray, np.ndarray]:
    """Labels and eligibility mask for an evaluated outcome, read from timeline labels."""
    if outcome not in OUTCOMES:
        raise KeyError(f"unknown outcome {outcome!r}; expected one of {sorted(OUTCOMES)}")
    label_col, exclude_col = OUTCOMES[outcome]
    try:
        y = np.array([bool(tl.labels[label_col]) for tl in timelines], dtype=bool)
        keep = np.array([not (exclude_col and tl.labels[exclude_col]) for tl in timelines],
                        dtype=bool)
    except KeyError as exc:
        raise ValueError(f"timelines lack label {exc.args[0]!r} needed for {outcome}") from None
    return y, keep


def new_head(d_model: int) -> nn.Linear:
    """A single linear unit initialized to zero, so it starts at probability 0.5."""
    head = nn.Linear(d_model, 1)
    nn.init.zeros_(head.weight)
    nn.init.zeros_(head.bias)
    return head


def head_from_coefficients(coef, intercept: float) -> nn.Linear:
    head = nn.Linear(len(coef), 1)
    with torch.no_grad():
        head.weight.copy_(torch.as_tensor(np.asarray(coef, dtype=np.float32))[None])
        head.bias.fill_(float(intercept))
    return head


def _bucketed(lengths, batch_size: int, rng: np.random.Generator, max_tokens: int):
    """Shuffled batches of similar-length examples."""
    order = rng.permutation(len(lengths))
    window = batch_size * 16
    batches = []
    for lo in range(0, len(order), window):
        chunk = sorted(order[lo:lo + window], key=lambda i: lengths[i])
        cur: list[int] = []
        for i in chunk:
            if cur and (len(cur) >= batch_size or (len(cur) + 1) * lengths[i] > max_tokens):
                batches.append(cur)
                cur = []
            cur.append(int(i))
        if cur:
            batches.append(cur)
    return [batches[j] for j in rng.permutation(len(batches))]


def _classifier_logits(model: DecoderLM, head: nn.Linear, timelines) -> torch.Tensor:
    width = max(len(tl) for tl in timelines)
    batch = left_pad_batch(timelines, width)
    _, hidden = model(torch.as_tensor(batch.tokens), torch.as_tensor(batch.mask))
    return head(hidden[:, -1]).squeeze(-1)


def finetune_classifier(model: DecoderLM, timelines, outcome: str, mode: str = "plain",
                        lr: float = FINETUNE_LR, epochs: int = 1, batch_size: int = 16,
                        seed: int = 0, head: nn.Linear | None = None, warmup_steps: int = 0,
                        clip_norm: float | None = 1.0, weight_decay: float = 0.0,
                        max_tokens: int = 16384) -> tuple[DecoderLM, nn.Linear]:
    """Train a linear head on the last real token's hidden state, updating all weights.

    The inputs are copied; ``model`` and ``head`` are left untouched. In
    ``"urt"`` mode every example is cut to a uniformly random prefix, redrawn
    each epoch. Stays excluded from the outcome (ICU/IMV within 24 hours) are
    dropped before training.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if epochs < 0 or lr < 0:
        raise ValueError("epochs and lr must be non-negative")
    y, keep = outcome_labels(timelines, outcome)
    data = [tl for tl, k in zip(timelines, keep) if k]
    y = y[keep].astype(np.float32)
    if not data:
        raise ValueError(f"no eligible training stays for {outcome}")
    if any(len(tl) < 1 for tl in data):
        raise ValueError("empty timeline in training set")
    if y.min() == y.max():
        warnings.warn(f"training labels for {outcome} contain a single class", RuntimeWarning,
                      stacklevel=2)

    model = copy.deepcopy(model)
    head = copy.deepcopy(head) if head is not None else new_head(model.config.d_model)
    rng = np.random.default_rng(seed)
    steps_per_epoch = math.ceil(len(data) / batch_size)
    params = list(model.parameters()) + list(head.parameters())
    opt = OptimState(params, lr, warmup_steps, steps_per_epoch * epochs, weight_decay,
                     clip_norm, min_lr_ratio=0.1)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for epoch in range(epochs):
            model.train()
            head.train()
            if mode == "urt":
                examples = [uniform_random_truncate(tl, rng) for tl in data]
            else:
                examples = data
            lengths = [len(tl) for tl in examples]
            for idx in _bucketed(lengths, batch_size, rng, max_tokens):
                logits = _classifier_logits(model, head, [examples[i] for i in idx])
                loss = F.binary_cross_entropy_with_logits(logits, torch.as_tensor(y[idx]))
                if not torch.isfinite(loss):
                    raise NumericalError(f"non-finite fine-tuning loss at step {opt.step}")
                opt.apply(loss)
            log.debug("finetune %s epoch %d done (%d steps)", outcome, epoch, opt.step)
    model.eval()
    head.eval()
    return model, head


def _head_arrays(head: nn.Linear) -> tuple[np.ndarray, float]:
    return (head.weight.detach().double().numpy()[0], float(head.bias.detach().double()))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def predict_proba(model: DecoderLM, head: nn.Linear, timelines, batch_size: int = 32) -> np.ndarray:
    """Outcome probability for every timeline."""
    w, b = _head_arrays(head)
    return _sigmoid(encode(model, timelines, batch_size) @ w + b)


def predict_outcome(model: DecoderLM, head: nn.Linear, prefix) -> float:
    if len(prefix) < 1:
        raise ValueError("prefix must contain at least one token")
    return float(predict_proba(model, head, [prefix])[0])


def prefix_probabilities(model: DecoderLM, head: nn.Linear, timelines, batch_size: int = 32):
    """Per timeline, the predicted probability after each prefix length 1..n.

    Attention is causal, so one pass over the full timeline gives every prefix.
    """
    w, b = _head_arrays(head)
    out = [None] * len(timelines)
    for i, hidden in hidden_states(model, timelines, batch_size):
        out[i] = _sigmoid(hidden @ w + b)
    return out


def local_finetune(model: DecoderLM, head: nn.Linear, train, val, outcome: str,
                   search_space, mode: str = "plain", seed: int = 0, batch_size: int = 16,
                   **kwargs):
    """Grid search over ``search_space`` (dicts with ``lr`` and ``epochs``) by validation AUC.

    Returns the best model, its head, the chosen hyperparameters and one
    record per candidate.
    """
    candidates = list(search_space)
    if not candidates:
        raise ValueError("empty search space")
    train_ids = {tl.hospitalization_id for tl in train}
    if train_ids & {tl.hospitalization_id for tl in val}:
        raise ValueError("local training and validation sets overlap")
    y_val, keep = outcome_labels(val, outcome)
    val_eligible = [tl for tl, k in zip(val, keep) if k]

    best, records = None, []
    for params in candidates:
        params = dict(params)
        if params.get("epochs", 1) == 0:
            cand_model, cand_head = copy.deepcopy(model), copy.deepcopy(head)
        else:
            cand_model, cand_head = finetune_classifier(
                model, train, outcome, mode=mode, seed=seed, head=head,
                batch_size=batch_size, **{**kwargs, **params})
        auc = (safe_auc(predict_proba(cand_model, cand_head, val_eligible), y_val[keep])
               if val_eligible else float("nan"))
        records.append({**params, "val_auc": auc})
        score = -math.inf if math.isnan(auc) else auc
        if best is None or score > best[0]:
            best = (score, cand_model, cand_head, params)
    _, best_model, best_head, chosen = best
    return best_model, best_head, chosen, records

"""Scikit-learn style wrappers around pretraining and fine-tuning."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .finetune import FINETUNE_LR, finetune_classifier, outcome_labels, predict_proba
from .inference import encode
from .model import ModelConfig
from .training import TrainSchedule, pretrain


class SequenceModel(TransformerMixin, BaseEstimator):
    """Pretrains a decoder on timelines; ``transform`` returns last-token hidden states."""

    def __init__(self, vocab_size: int, d_model: int = 64, n_layers: int = 2, n_heads: int = 4,
                 d_ff: int = 128, max_context: int = 1024, dropout: float = 0.0,
                 lr: float = 3e-4, warmup_steps: int = 50, epochs: int = 1,
                 max_steps: int | None = None, batch_size: int = 16, block_len: int = 256,
                 pad_gap_max: int = 8, seed: int = 0):
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.max_context = max_context
        self.dropout = dropout
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.epochs = epochs
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.block_len = block_len
        self.pad_gap_max = pad_gap_max
        self.seed = seed

    def _configs(self):
        config = ModelConfig(self.vocab_size, self.d_model, self.n_layers, self.n_heads,
                             self.d_ff, self.max_context, self.dropout, self.seed)
        schedule = TrainSchedule(lr=self.lr, warmup_steps=self.warmup_steps, epochs=self.epochs,
                                 max_steps=self.max_steps, batch_size=self.batch_size,
                                 block_len=self.block_len, pad_gap_max=self.pad_gap_max,
                                 seed=self.seed)
        return config, schedule

    def fit(self, timelines, y=None, val_timelines=None):
        config, schedule = self._configs()
        result = pretrain(timelines, config, schedule, val_timelines)
        self.model_ = result.model
        self.log_ = result.log
        self.val_nll_ = result.val_nll
        return self

    def transform(self, timelines):
        check_is_fitted(self, "model_")
        return encode(self.model_, timelines)


class SequenceClassifier(ClassifierMixin, BaseEstimator):
    """Fine-tunes a pretrained decoder with a linear head for one outcome."""

    def __init__(self, base_model, outcome: str = "same_admission_death", mode: str = "plain",
                 lr: float = FINETUNE_LR, epochs: int = 1, batch_size: int = 16, seed: int = 0):
        self.base_model = base_model
        self.outcome = outcome
        self.mode = mode
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, timelines, y=None):
        self.model_, self.head_ = finetune_classifier(
            self.base_model, timelines, self.outcome, mode=self.mode, lr=self.lr,
            epochs=self.epochs, batch_size=self.batch_size, seed=self.seed)
        self.classes_ = np.array([False, True])
        return self

    def predict_proba(self, timelines):
        check_is_fitted(self, "head_")
        p = predict_proba(self.model_, self.head_, timelines)
        return np.column_stack([1.0 - p, p])

    def decision_function(self, timelines):
        p = self.predict_proba(timelines)[:, 1]
        return np.log(p) - np.log1p(-p)

    def predict(self, timelines):
        return self.predict_proba(timelines)[:, 1] > 0.5

    def score(self, timelines, y=None):
        """ROC-AUC on the stays eligible for the outcome."""
        from ..analytics.metrics import roc_auc

        labels, keep = outcome_labels(timelines, self.outcome)
        kept = [tl for tl, k in zip(timelines, keep) if k]
        return roc_auc(self.predict_proba(kept)[:, 1], labels[keep])

"""Decoder-only sequence model: pretraining, extraction and fine-tuning."""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .estimator import SequenceClassifier, SequenceModel
from .finetune import (
    FINETUNE_LR,
    finetune_classifier,
    head_from_coefficients,
    local_finetune,
    new_head,
    outcome_labels,
    predict_outcome,
    predict_proba,
    prefix_probabilities,
)
from .inference import (
    encode,
    extract_representation,
    extract_trajectory,
    extract_trajectory_incremental,
    hidden_states,
)
from .model import DecoderLM, ModelConfig, forward, init_model, nll_loss
from .training import (
    NumericalError,
    OptimState,
    PretrainResult,
    TrainSchedule,
    evaluate_nll,
    lr_factor,
    pretrain,
    train_step,
    unigram_entropy,
    write_training_log,
)

__all__ = [
    "load_checkpoint",
    "read_checkpoint",
    "save_checkpoint",
    "SequenceClassifier",
    "SequenceModel",
    "FINETUNE_LR",
    "finetune_classifier",
    "head_from_coefficients",
    "local_finetune",
    "new_head",
    "outcome_labels",
    "predict_outcome",
    "predict_proba",
    "prefix_probabilities",
    "encode",
    "extract_representation",
    "extract_trajectory",
    "extract_trajectory_incremental",
    "hidden_states",
    "DecoderLM",
    "ModelConfig",
    "forward",
    "init_model",
    "nll_loss",
    "NumericalError",
    "OptimState",
    "PretrainResult",
    "TrainSchedule",
    "evaluate_nll",
    "lr_factor",
    "pretrain",
    "train_step",
    "unigram_entropy",
    "write_training_log",
]

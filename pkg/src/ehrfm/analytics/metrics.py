"""Rank-based discrimination metrics."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    """The metric needs both classes to be present."""


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve as a normalized Mann-Whitney U statistic.

    Tied scores between a positive and a negative count one half.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be aligned 1-D arrays")
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both positive and negative labels")
    ranks = rankdata(scores)  # average ranks for ties
    # ranks are multiples of 1/2 so this sum is exact in floating point
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def safe_auc(scores, labels) -> float:
    """:func:`roc_auc`, or NaN when only one class is present."""
    try:
        return roc_auc(scores, labels)
    except UndefinedMetricError:
        return float("nan")

"""Two-component PCA with a fixed sign convention."""

from __future__ import annotations

import numpy as np


def pca_2d(M, return_components: bool = False):
    """Project rows of ``M`` onto the top two principal axes.

    Returns ``(projections, explained_variance)``; with ``return_components``
    the (2, d) axes are appended. Each axis is flipped so its largest-magnitude
    loading is positive.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < 2 or M.shape[1] < 2:
        raise ValueError("need at least 2 rows and 2 columns")
    centered = M - M.mean(axis=0)
    if not np.any(np.abs(centered) > 0):
        raise ValueError("matrix has rank 0 after centering")
    cov = centered.T @ centered / (M.shape[0] - 1)
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values)[::-1][:2]
    values, axes = np.clip(values[order], 0.0, None), vectors[:, order].T
    for i in range(2):
        if axes[i, np.argmax(np.abs(axes[i]))] < 0:
            axes[i] = -axes[i]
    proj = centered @ axes.T
    if return_components:
        return proj, values, axes
    return proj, values

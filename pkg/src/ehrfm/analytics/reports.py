"""Subgroup AUC grids and partial-sequence prediction curves."""

from __future__ import annotations

import warnings

import numpy as np
import pandas as pd

from ..clif import OUTCOMES
from .metrics import safe_auc

SUBSETS = ("inliers", "outliers", "overall")
REPORT_OUTCOMES = tuple(OUTCOMES)


def subgroup_report(predictions, labels, outlier_flags, eligible=None) -> dict:
    """AUC per subset and outcome.

    ``predictions``, ``labels`` and ``eligible`` map outcome names to arrays
    aligned with ``outlier_flags``. Stays outside ``eligible`` (the 24-hour
    restriction) are dropped for that outcome. Cells where a subset lacks one
    class are ``None``.
    """
    flags = np.asarray(outlier_flags, dtype=bool)
    report = {s: {} for s in SUBSETS}
    for outcome, scores in predictions.items():
        scores = np.asarray(scores, dtype=float)
        y = np.asarray(labels[outcome], dtype=bool)
        keep = (np.ones_like(y) if eligible is None or outcome not in eligible
                else np.asarray(eligible[outcome], dtype=bool))
        if not (scores.shape == y.shape == keep.shape == flags.shape):
            raise ValueError(f"arrays for {outcome} are not aligned")
        for subset, rows in (("inliers", keep & ~flags), ("outliers", keep & flags),
                             ("overall", keep)):
            auc = safe_auc(scores[rows], y[rows]) if rows.any() else float("nan")
            report[subset][outcome] = None if np.isnan(auc) else auc
    return report


def report_frame(report: dict, site: str | None = None) -> pd.DataFrame:
    """Long table (site, subset, outcome, auc) from a :func:`subgroup_report` grid."""
    rows = [{"site": site, "subset": s, "outcome": o, "auc": v}
            for s in SUBSETS for o, v in report.get(s, {}).items()]
    df = pd.DataFrame(rows, columns=["site", "subset", "outcome", "auc"])
    return df if site is not None else df.drop(columns="site")


def realtime_curves(predictor, timelines, labels, n_per_class: int = 100,
                    seed: int = 0) -> pd.DataFrame:
    """Mean and 2.5/97.5% quantiles of per-prefix predictions, per outcome class.

    ``predictor`` maps a list of timelines to one array per timeline holding the
    prediction after each prefix length 1..n. ``n_per_class`` stays are
    sampled uniformly without replacement from each class.
    """
    labels = np.asarray(labels, dtype=bool)
    if len(labels) != len(timelines):
        raise ValueError("labels and timelines are not aligned")
    rng = np.random.default_rng(seed)
    frames = []
    for cls in (False, True):
        pool = np.flatnonzero(labels == cls)
        if pool.size < n_per_class:
            warnings.warn(f"only {pool.size} stays with label {int(cls)}; using all of them",
                          RuntimeWarning, stacklevel=2)
            chosen = pool
        else:
            chosen = np.sort(rng.choice(pool, size=n_per_class, replace=False))
        if chosen.size == 0:
            continue
        curves = predictor([timelines[i] for i in chosen])
        longest = max(len(c) for c in curves)
        grid = np.full((len(curves), longest), np.nan)
        for r, c in enumerate(curves):
            grid[r, :len(c)] = c
        counts = (~np.isnan(grid)).sum(axis=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lo, med, hi = np.nanquantile(grid, [0.025, 0.5, 0.975], axis=0)
            mean = np.nanmean(grid, axis=0)
        frames.append(pd.DataFrame({
            "label": int(cls), "token_index": np.arange(1, longest + 1), "n": counts,
            "mean": mean, "q025": lo, "median": med, "q975": hi,
        }))
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["label", "token_index", "n", "mean", "q025", "median", "q975"])

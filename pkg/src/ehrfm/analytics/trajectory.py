"""Hidden-state trajectory features and the dynamics regressions built on them."""

from __future__ import annotations

import dataclasses

import numpy as np
import pandas as pd

from ..clif import OUTCOMES
from .logit import LogitFit, add_intercept, fit_logit_mle

REGRESSORS = ("Trajectory Length", "Maximum Jump", "Anomaly Score")
FEATURE_COLUMNS = ("path_length", "max_jump", "anomaly_score")


@dataclasses.dataclass(frozen=True)
class TrajectoryFeatures:
    hospitalization_id: str
    path_length: float
    max_jump: float
    anomaly_score: float = float("nan")


def trajectory_features(H) -> tuple[float, float]:
    """Summed and largest L2 step between consecutive rows of ``H``."""
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    if H.shape[0] == 0:
        raise ValueError("empty trajectory")
    if H.shape[0] == 1:
        return 0.0, 0.0
    steps = np.linalg.norm(np.diff(H, axis=0), axis=1)
    return float(steps.sum()), float(steps.max())


def feature_table(ids, trajectories, anomaly_scores=None) -> pd.DataFrame:
    """One row per stay with path length, max jump and (optionally) anomaly score."""
    rows = [trajectory_features(H) for H in trajectories]
    df = pd.DataFrame(rows, columns=["path_length", "max_jump"],
                      index=pd.Index(list(ids), name="hospitalization_id"))
    df["anomaly_score"] = np.nan if anomaly_scores is None else np.asarray(anomaly_scores, float)
    return df


def dynamics_regression(features: pd.DataFrame, outcomes: pd.DataFrame, outcome: str) -> LogitFit:
    """Logit of an outcome on [1, path length, max jump, anomaly score].

    Stays with the ICU/IMV event inside the first 24 hours are dropped for
    those outcomes.
    """
    if outcome not in OUTCOMES:
        raise KeyError(f"unknown outcome {outcome!r}")
    label_col, exclude_col = OUTCOMES[outcome]
    missing = features.index.difference(outcomes.index)
    if len(missing):
        raise KeyError(f"no outcomes for {len(missing)} stays, e.g. {missing[0]!r}")
    joined = features.join(outcomes, how="left")
    if exclude_col is not None:
        joined = joined[~joined[exclude_col].astype(bool)]
    if joined.empty:
        raise ValueError(f"no stays remain for {outcome} after the 24-hour restriction")
    X = add_intercept(joined[list(FEATURE_COLUMNS)].to_numpy(dtype=float))
    y = joined[label_col].to_numpy(dtype=int)
    return fit_logit_mle(X, y, ["const", *REGRESSORS])

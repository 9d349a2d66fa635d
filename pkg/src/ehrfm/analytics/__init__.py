"""Trajectory dynamics, logistic MLE, discrimination metrics, subgroup reports and PCA."""

from .logit import (
    LogitFit,
    LogitMLE,
    PerfectSeparationError,
    SingularInformationError,
    add_intercept,
    fit_logit_mle,
    format_coefficient,
    log_likelihood,
    null_log_likelihood,
)
from .metrics import UndefinedMetricError, roc_auc, safe_auc
from .pca import pca_2d
from .reports import SUBSETS, realtime_curves, report_frame, subgroup_report
from .trajectory import (
    REGRESSORS,
    TrajectoryFeatures,
    dynamics_regression,
    feature_table,
    trajectory_features,
)

__all__ = [
    "LogitFit",
    "LogitMLE",
    "PerfectSeparationError",
    "SingularInformationError",
    "add_intercept",
    "fit_logit_mle",
    "format_coefficient",
    "log_likelihood",
    "null_log_likelihood",
    "UndefinedMetricError",
    "roc_auc",
    "safe_auc",
    "pca_2d",
    "SUBSETS",
    "realtime_curves",
    "report_frame",
    "subgroup_report",
    "REGRESSORS",
    "TrajectoryFeatures",
    "dynamics_regression",
    "feature_table",
    "trajectory_features",
]

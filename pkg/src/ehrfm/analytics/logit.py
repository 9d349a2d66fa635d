"""Unpenalized logistic regression by Newton-Raphson, with Wald inference."""

from __future__ import annotations

import dataclasses
import io

import numpy as np
from scipy.stats import chi2, norm
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

MAX_ITER = 100
GRAD_TOL = 1e-8
SEPARATION_LIMIT = 50.0
PERFECT_FIT_TOL = 1e-6
Z_975 = float(norm.ppf(0.975))


class SingularInformationError(np.linalg.LinAlgError):
    """The design matrix is rank deficient."""


class PerfectSeparationError(ValueError):
    """Coefficients diverge because some linear combination separates the classes."""


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def log_likelihood(beta, X, y) -> float:
    eta = X @ beta
    # log(1 + e^eta) computed stably
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def null_log_likelihood(y) -> float:
    n, k = y.size, float(y.sum())
    if k in (0.0, float(n)):
        return 0.0
    p = k / n
    return float(k * np.log(p) + (n - k) * np.log1p(-p))


@dataclasses.dataclass
class LogitFit:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_values: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    llf: float
    llnull: float
    llr: float
    llr_pvalue: float
    pseudo_r2: float
    nobs: int
    df_model: int
    df_resid: int
    converged: bool
    n_iter: int
    cov: np.ndarray

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(np.asarray(X, dtype=float) @ self.coef)

    def row(self, name: str) -> str:
        i = self.names.index(name)
        return format_coefficient(self.coef[i], self.z[i], self.p_values[i])

    def table(self):
        import pandas as pd

        return pd.DataFrame({
            "coef": self.coef, "std err": self.se, "z": self.z, "P>|z|": self.p_values,
            "[0.025": self.ci_low, "0.975]": self.ci_high,
        }, index=pd.Index(self.names, name="variable"))

    def header(self) -> dict:
        return {
            "No. Observations": self.nobs,
            "Df Residuals": self.df_resid,
            "Df Model": self.df_model,
            "Pseudo R-squ.": self.pseudo_r2,
            "Log-Likelihood": self.llf,
            "LL-Null": self.llnull,
            "LLR p-value": self.llr_pvalue,
            "converged": self.converged,
        }

    def summary(self, title: str = "Logit Regression Results", dep_var: str = "y") -> str:
        out = io.StringIO()
        width = 78
        out.write(title.center(width) + "\n" + "=" * width + "\n")
        left = [("Dep. Variable:", dep_var), ("Model:", "Logit"), ("Method:", "MLE"),
                ("converged:", str(self.converged))]
        right = [("No. Observations:", f"{self.nobs}"), ("Df Residuals:", f"{self.df_resid}"),
                 ("Df Model:", f"{self.df_model}"), ("Pseudo R-squ.:", f"{self.pseudo_r2:.4f}"),
                 ("Log-Likelihood:", f"{self.llf:.2f}"), ("LL-Null:", f"{self.llnull:.2f}"),
                 ("LLR p-value:", f"{self.llr_pvalue:.3e}")]
        for i in range(max(len(left), len(right))):
            a = left[i] if i < len(left) else ("", "")
            b = right[i] if i < len(right) else ("", "")
            out.write(f"{a[0]:<16}{a[1]:>22}   {b[0]:<18}{b[1]:>19}\n")
        out.write("=" * width + "\n")
        out.write(f"{'':<20}{'coef':>10}{'std err':>11}{'z':>9}{'P>|z|':>9}{'[0.025':>10}{'0.975]':>9}\n")
        out.write("-" * width + "\n")
        for i, name in enumerate(self.names):
            out.write(f"{name[:20]:<20}{self.coef[i]:>10.4g}{self.se[i]:>11.3g}{self.z[i]:>9.3f}"
                      f"{self.p_values[i]:>9.3f}{self.ci_low[i]:>10.3g}{self.ci_high[i]:>9.3g}\n")
        out.write("=" * width + "\n")
        return out.getvalue()

    def to_json(self) -> dict:
        return {
            "header": {k: (v if not isinstance(v, np.generic) else v.item())
                       for k, v in self.header().items()},
            "coefficients": {
                name: {"coef": float(self.coef[i]), "std_err": float(self.se[i]),
                       "z": float(self.z[i]), "p": float(self.p_values[i]),
                       "ci_low": float(self.ci_low[i]), "ci_high": float(self.ci_high[i]),
                       "formatted": self.row(name)}
                for i, name in enumerate(self.names)
            },
        }


def format_coefficient(coef: float, z: float, p: float) -> str:
    """Compact coefficient cell such as ``4.839e-05, z=18.748, p=0.000``."""
    return f"{coef:.3e}, z={z:.3f}, p={p:.3f}"


def _check_design(X, y, names):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
        raise ValueError("X must be (n, k) and y must have n entries")
    if X.shape[0] == 0:
        raise ValueError("no observations")
    if not np.isfinite(X).all():
        raise ValueError("design matrix contains non-finite values")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("y must be binary 0/1")
    y = y.astype(float)
    if y.min() == y.max():
        raise ValueError("y contains a single class")
    names = list(names) if names is not None else [f"x{i}" for i in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValueError("names do not match the number of columns")
    const = np.all(X == X[:1], axis=0)
    intercept = const & (X[0] == 1.0)
    if (const & ~intercept).any():
        bad = names[int(np.flatnonzero(const & ~intercept)[0])]
        raise ValueError(f"column {bad!r} is constant")
    if intercept.sum() > 1:
        raise SingularInformationError("more than one intercept column")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularInformationError("design matrix is rank deficient")
    return X, y, names, bool(intercept.any())


def fit_logit_mle(X, y, names=None, max_iter: int = MAX_ITER, tol: float = GRAD_TOL,
                  inference: bool = True) -> LogitFit:
    """Maximum likelihood logit fit.

    ``X`` should already contain an intercept column of ones if one is wanted.
    Iterates Newton steps (halved when the likelihood would drop) until the
    score vector norm falls below ``tol``.
    """
    X, y, names, has_const = _check_design(X, y, names)
    n, k = X.shape
    slopes = ~np.all(X == 1.0, axis=0)
    beta = np.zeros(k)
    ll = log_likelihood(beta, X, y)
    converged, it = False, 0
    for it in range(1, max_iter + 1):
        p = _sigmoid(X @ beta)
        grad = X.T @ (y - p)
        if np.linalg.norm(grad) < tol:
            converged = True
            it -= 1
            break
        info = (X * (p * (1 - p))[:, None]).T @ X
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularInformationError("information matrix is singular") from exc
        t = 1.0
        while True:
            cand = beta + t * step
            cand_ll = log_likelihood(cand, X, y)
            if cand_ll >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, cand_ll
        # the intercept alone can legitimately be large when regressors sit far from zero
        if np.abs(beta[slopes]).max(initial=0.0) > SEPARATION_LIMIT:
            raise PerfectSeparationError(
                f"coefficients exceed {SEPARATION_LIMIT} in magnitude; the outcome is "
                "(quasi-)perfectly separated")
    else:
        p = _sigmoid(X @ beta)
        converged = np.linalg.norm(X.T @ (y - p)) < tol

    p = _sigmoid(X @ beta)
    if np.abs(y - p).max() < PERFECT_FIT_TOL:
        raise PerfectSeparationError("fitted probabilities reproduce the outcome exactly; "
                                     "the outcome is perfectly separated")
    info = (X * (p * (1 - p))[:, None]).T @ X
    if inference:
        try:
            cov = np.linalg.inv(info)
        except np.linalg.LinAlgError as exc:
            raise SingularInformationError("information matrix is singular") from exc
        se = np.sqrt(np.diag(cov))
    else:
        cov = np.full((k, k), np.nan)
        se = np.full(k, np.nan)
    z = beta / se
    pv = 2.0 * norm.sf(np.abs(z))
    llnull = null_log_likelihood(y)
    df_model = k - 1 if has_const else k
    llr = 2.0 * (ll - llnull)
    llr_p = float(chi2.sf(llr, df_model)) if df_model > 0 else float("nan")
    r2 = 1.0 - ll / llnull if llnull < 0 else float("nan")
    return LogitFit(names, beta, se, z, pv, beta - Z_975 * se, beta + Z_975 * se, ll, llnull,
                    llr, llr_p, r2, n, df_model, n - k, bool(converged), it, cov)


def add_intercept(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.column_stack([np.ones(X.shape[0]), X])


class LogitMLE(ClassifierMixin, BaseEstimator):
    """Unregularized logistic regression; ``result_`` holds the full :class:`LogitFit`."""

    def __init__(self, fit_intercept: bool = True, max_iter: int = MAX_ITER,
                 tol: float = GRAD_TOL, inference: bool = True):
        self.fit_intercept = fit_intercept
        self.max_iter = max_iter
        self.tol = tol
        self.inference = inference

    def _design(self, X):
        X = check_array(X, dtype=float)
        return add_intercept(X) if self.fit_intercept else X

    def fit(self, X, y, feature_names=None):
        D = self._design(X)
        names = list(feature_names) if feature_names is not None else \
            [f"x{i}" for i in range(D.shape[1] - int(self.fit_intercept))]
        if self.fit_intercept:
            names = ["const"] + names
        self.result_ = fit_logit_mle(D, np.asarray(y).astype(int), names, self.max_iter,
                                     self.tol, self.inference)
        coef = self.result_.coef
        self.intercept_ = float(coef[0]) if self.fit_intercept else 0.0
        self.coef_ = coef[1:] if self.fit_intercept else coef
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = D.shape[1] - int(self.fit_intercept)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "result_")
        return self._design(X) @ self.result_.coef

    def predict_proba(self, X):
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)

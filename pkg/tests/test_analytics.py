import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ehrfm.analytics import (
    REGRESSORS,
    SUBSETS,
    LogitMLE,
    PerfectSeparationError,
    SingularInformationError,
    UndefinedMetricError,
    add_intercept,
    dynamics_regression,
    feature_table,
    fit_logit_mle,
    format_coefficient,
    log_likelihood,
    pca_2d,
    realtime_curves,
    report_frame,
    roc_auc,
    safe_auc,
    subgroup_report,
    trajectory_features,
)
from ehrfm.clif import OUTCOME_COLUMNS
from ehrfm.tokenizer import TokenTimeline

DATA = Path(__file__).parent / "data"


# ------------------------------------------------------------------ AUC


def _brute_auc(s, y):
    pos, neg = s[y], s[~y]
    diff = pos[:, None] - neg[None, :]
    return ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / (pos.size * neg.size)


def test_auc_examples():
    assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert roc_auc([0.1, 0.2, 0.9], [0, 0, 1]) == 1.0
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(UndefinedMetricError):
        roc_auc([0.1, 0.2], [1, 1])
    assert math.isnan(safe_auc([0.1, 0.2], [0, 0]))


def test_auc_equals_pair_counting():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 501))
        y = rng.random(n) < rng.uniform(0.05, 0.95)
        if y.all() or not y.any():
            y[0] = not y[0]
        # coarse grid so ties are common
        s = rng.integers(0, rng.integers(2, 60), n).astype(float)
        assert roc_auc(s, y) == _brute_auc(s, y)


# ------------------------------------------------------------------ trajectories


def test_trajectory_feature_examples():
    assert trajectory_features([0.0, 3.0, 1.0]) == (5.0, 3.0)
    assert trajectory_features(np.ones((4, 3))) == (0.0, 0.0)
    assert trajectory_features(np.zeros((1, 5))) == (0.0, 0.0)
    assert trajectory_features([[0.0, 0.0], [3.0, 4.0]]) == (5.0, 5.0)
    with pytest.raises(ValueError):
        trajectory_features(np.zeros((0, 2)))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 6)),
              elements=st.floats(-1e3, 1e3)))
def test_jump_bounds(H):
    path, jump = trajectory_features(H)
    n = H.shape[0]
    assert jump <= path + 1e-9 * max(1.0, path)
    assert path <= (n - 1) * jump + 1e-9 * max(1.0, path)
    if n == 1:
        assert (path, jump) == (0.0, 0.0)


# ------------------------------------------------------------------ logistic MLE


def _logit200():
    raw = np.loadtxt(DATA / "logit200.csv", delimiter=",", skiprows=1)
    return add_intercept(raw[:, :3]), raw[:, 3].astype(int)


def test_logit_matches_independent_optimizer():
    X, y = _logit200()
    oracle = json.loads((DATA / "logit200_oracle.json").read_text())
    fit = fit_logit_mle(X, y)
    np.testing.assert_allclose(fit.coef, oracle["coef"], atol=1e-6)
    assert fit.llf == pytest.approx(oracle["llf"], abs=1e-8)
    p = 1 / (1 + np.exp(-(X @ fit.coef)))
    assert np.linalg.norm(X.T @ (y - p)) < 1e-6
    assert fit.converged


def test_logit_matches_statsmodels():
    sm = pytest.importorskip("statsmodels.api")
    X, y = _logit200()
    ref = sm.Logit(y, X).fit(disp=0)
    fit = fit_logit_mle(X, y)
    np.testing.assert_allclose(fit.coef, ref.params, atol=1e-8)
    np.testing.assert_allclose(fit.se, ref.bse, rtol=1e-6)
    np.testing.assert_allclose(fit.p_values, ref.pvalues, rtol=1e-6, atol=1e-12)
    assert fit.pseudo_r2 == pytest.approx(ref.prsquared, abs=1e-10)
    assert fit.llr_pvalue == pytest.approx(ref.llr_pvalue, rel=1e-6)


def test_intercept_only_is_logit_of_mean():
    y = np.array([1, 0, 0, 1, 0, 0, 0, 1, 0, 0])
    fit = fit_logit_mle(np.ones((10, 1)), y)
    assert abs(fit.coef[0] - math.log(0.3 / 0.7)) < 1e-10
    assert fit.df_model == 0


def test_six_point_summary_statistics():
    x = np.array([1.0, 2, 3, 4, 5, 6])
    y = np.array([0, 0, 1, 0, 1, 1])
    fit = fit_logit_mle(add_intercept(x[:, None]), y)
    b0, b1 = fit.coef
    z = b0 + b1 * x
    ll = float(np.sum(y * z - np.log1p(np.exp(z))))
    ll0 = 6 * math.log(0.5)
    llr = 2 * (ll - ll0)
    assert fit.llf == pytest.approx(ll, abs=1e-12)
    assert fit.llnull == pytest.approx(ll0, abs=1e-12)
    assert abs(fit.pseudo_r2 - (1 - ll / ll0)) < 1e-8
    # chi-square survival with one degree of freedom
    assert abs(fit.llr_pvalue - math.erfc(math.sqrt(llr / 2))) < 1e-8


def test_logit_errors():
    X, y = _logit200()
    with pytest.raises(SingularInformationError):
        fit_logit_mle(np.column_stack([X, X[:, 1]]), y)
    sep_x = np.array([-3.0, -2, -1, 1, 2, 3])
    with pytest.raises(PerfectSeparationError):
        fit_logit_mle(add_intercept(sep_x[:, None]), (sep_x > 0).astype(int))
    with pytest.raises(ValueError):
        fit_logit_mle(X, np.zeros(len(y), dtype=int))


def test_logit_large_intercept_is_not_separation():
    rng = np.random.default_rng(4)
    x = 7.0 + rng.normal(scale=0.1, size=400)
    y = (rng.random(400) < 1 / (1 + np.exp(-(-56.0 + 8.0 * x)))).astype(int)
    fit = fit_logit_mle(add_intercept(x[:, None]), y)
    assert fit.coef[0] < -50 and fit.converged


def test_coefficient_format():
    assert format_coefficient(4.839e-05, 18.748, 0.0) == "4.839e-05, z=18.748, p=0.000"
    X, y = _logit200()
    fit = fit_logit_mle(X, y, names=["const", "a", "b", "c"])
    assert fit.row("a").startswith(f"{fit.coef[1]:.3e}, z=")
    assert "Logit" in fit.summary()
    json.dumps(fit.to_json())


def test_log_likelihood_helper():
    X, y = _logit200()
    assert log_likelihood(np.zeros(4), X, y) == pytest.approx(200 * math.log(0.5))


def test_logit_estimator():
    X, y = _logit200()
    est = LogitMLE().fit(X[:, 1:], y)
    np.testing.assert_allclose(est.predict_proba(X[:, 1:])[:, 1],
                               fit_logit_mle(X, y).predict_proba(X), atol=1e-12)


# ------------------------------------------------------------------ dynamics regressions


def _outcomes(ids, death, early=None):
    df = pd.DataFrame(False, index=pd.Index(ids, name="hospitalization_id"),
                      columns=list(OUTCOME_COLUMNS))
    df["same_admission_death"] = death
    df["icu_any"] = death
    if early is not None:
        df["icu_within_24h"] = early
    return df


def test_planted_jump_signal():
    rng = np.random.default_rng(42)
    n, d = 800, 6
    ids = [f"s{i}" for i in range(n)]
    jumps = rng.uniform(0, 4, n)
    trajs = []
    for j in jumps:
        steps = rng.normal(0, 0.1, size=(20, d))
        direction = rng.normal(size=d)
        steps[rng.integers(0, 20)] += j * direction / np.linalg.norm(direction)
        trajs.append(np.cumsum(steps, axis=0))
    feats = feature_table(ids, trajs, rng.uniform(0.3, 0.7, n))
    death = rng.random(n) < 1 / (1 + np.exp(-(-2.5 + 1.2 * feats["max_jump"].to_numpy())))
    fit = dynamics_regression(feats, _outcomes(ids, death), "same_admission_death")
    i = fit.names.index("Maximum Jump")
    assert fit.coef[i] > 0 and fit.p_values[i] < 0.01
    assert fit.names == ["const", *REGRESSORS]
    assert fit.nobs == n


def test_dynamics_restriction():
    rng = np.random.default_rng(0)
    ids = [f"s{i}" for i in range(60)]
    feats = feature_table(ids, [rng.normal(size=(5, 2)) for _ in ids], rng.random(60))
    death = rng.random(60) < 0.4
    early = np.arange(60) < 20
    fit = dynamics_regression(feats, _outcomes(ids, death, early), "icu_admission")
    assert fit.nobs == 40
    with pytest.raises(ValueError):
        dynamics_regression(feats, _outcomes(ids, death, np.ones(60, bool)), "icu_admission")


# ------------------------------------------------------------------ PCA


def test_pca_triangle_closed_form():
    pts = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 1.0]])
    # covariance [[3, -1/2], [-1/2, 1/3]] with eigenvalues (10 +- sqrt 73) / 6
    lam1, lam2 = (10 + math.sqrt(73)) / 6, (10 - math.sqrt(73)) / 6
    v1 = np.array([0.5, 3 - lam1])
    v1 /= np.linalg.norm(v1)
    v2 = np.array([-v1[1], v1[0]])
    if abs(v2[1]) > abs(v2[0]) and v2[1] < 0 or abs(v2[0]) >= abs(v2[1]) and v2[0] < 0:
        v2 = -v2
    centered = pts - pts.mean(axis=0)
    proj, var = pca_2d(pts)
    np.testing.assert_allclose(var, [lam1, lam2], atol=1e-12)
    np.testing.assert_allclose(proj, np.column_stack([centered @ v1, centered @ v2]), atol=1e-12)


def test_pca_line_and_rotation():
    t = np.linspace(-1, 1, 30)
    _, var = pca_2d(np.column_stack([t, 2 * t]))
    assert var[1] == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(0)
    M = rng.normal(size=(50, 5)) * [3, 2, 1, 0.5, 0.1]
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    np.testing.assert_allclose(pca_2d(M)[1], pca_2d(M @ Q)[1], atol=1e-8)
    with pytest.raises(ValueError):
        pca_2d(np.ones((4, 3)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 40), st.integers(2, 6)),
              elements=st.floats(-100, 100)))
def test_pca_projections_are_centered(M):
    if np.ptp(M, axis=0).max() < 1e-6:
        return
    proj, var = pca_2d(M)
    assert np.all(np.abs(proj.mean(axis=0)) < 1e-9 * max(1.0, np.abs(M).max()))
    assert var[0] >= var[1] >= 0


# ------------------------------------------------------------------ reports


def _report_inputs(seed=0, n=300):
    rng = np.random.default_rng(seed)
    flags = rng.random(n) < 0.1
    preds, labels, elig = {}, {}, {}
    for o in ("same_admission_death", "long_length_of_stay", "icu_admission", "imv_event"):
        labels[o] = rng.random(n) < 0.3
        preds[o] = rng.random(n) + 0.3 * labels[o]
        elig[o] = rng.random(n) < 0.9
    return preds, labels, flags, elig


def test_report_grid():
    preds, labels, flags, elig = _report_inputs()
    rep = subgroup_report(preds, labels, flags, elig)
    assert set(rep) == set(SUBSETS)
    assert set(rep["overall"]) == {"same_admission_death", "long_length_of_stay",
                                   "icu_admission", "imv_event"}
    for o in preds:
        k = elig[o]
        assert rep["overall"][o] == roc_auc(preds[o][k], labels[o][k])
    assert report_frame(rep, "A").shape == (12, 4)


def test_report_all_inliers():
    preds, labels, _, elig = _report_inputs(1)
    rep = subgroup_report(preds, labels, np.zeros(300, bool), elig)
    assert rep["inliers"] == rep["overall"]
    assert all(v is None for v in rep["outliers"].values())


def test_realtime_curves():
    tls = [TokenTimeline(f"t{i}", np.ones(5 + i % 7), np.zeros(5 + i % 7)) for i in range(300)]
    labels = np.arange(300) % 3 == 0
    const = realtime_curves(lambda ts: [np.full(len(t), 0.3) for t in ts], tls, labels)
    np.testing.assert_allclose(const[["mean", "q025", "median", "q975"]].to_numpy(), 0.3)
    assert const.groupby("label")["n"].max().tolist() == [100, 100]
    rng = np.random.default_rng(0)
    noisy = realtime_curves(lambda ts: [rng.random(len(t)) for t in ts], tls, labels)
    assert (noisy["q025"] <= noisy["median"]).all() and (noisy["median"] <= noisy["q975"]).all()
    with pytest.warns(RuntimeWarning):
        realtime_curves(lambda ts: [np.zeros(len(t)) for t in ts], tls[:50], labels[:50])

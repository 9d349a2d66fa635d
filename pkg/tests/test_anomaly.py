import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from ehrfm.analytics import roc_auc
from ehrfm.anomaly import (
    N_TREES,
    IsolationForest,
    IsolationTree,
    anomaly_score,
    c_factor,
    contamination_threshold,
    fit_forest,
    harmonic,
    label_outliers,
    load_forest,
    path_length,
    read_scores,
    save_forest,
    score_from_path,
    write_scores,
)


def _tree(feature, threshold, left, right, size, depth):
    return IsolationTree(*(np.asarray(a) for a in (feature, threshold, left, right, size, depth)))


def test_normalizer_values():
    assert c_factor(1) == 0.0
    assert c_factor(2) == pytest.approx(1.0)
    assert c_factor(5) == pytest.approx(2.5666666667, abs=1e-9)
    assert c_factor(256) == pytest.approx(10.2486899, abs=1e-6)
    assert harmonic(4) == pytest.approx(25 / 12)


def test_path_length_examples():
    # root: x<0 -> leaf(depth 1, m=1); else x<1 -> leaf(depth 2, m=5) | leaf(depth 2, m=1)
    t = _tree([0, -1, 0, -1, -1], [0.0, 0, 1.0, 0, 0], [1, -1, 3, -1, -1], [2, -1, 4, -1, -1],
              [7, 1, 6, 5, 1], [0, 1, 1, 2, 2])
    got = path_length(t, [[-3.0], [0.5], [9.0]])
    np.testing.assert_allclose(got, [1.0, 2 + 2.5666666667, 2.0], atol=1e-9)
    root_leaf = _tree([-1], [0.0], [-1], [-1], [1], [0])
    assert path_length(root_leaf, [[4.0]])[0] == 0.0


def test_score_formula():
    c = c_factor(256)
    assert score_from_path(c, c) == 0.5
    assert score_from_path(2 * c, c) == 0.25
    assert score_from_path(1e-12, c) == pytest.approx(1.0)


def test_forest_defaults_and_errors():
    assert N_TREES == 100
    with pytest.raises(ValueError):
        fit_forest(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        fit_forest(np.array([[np.nan, 1.0], [0.0, 1.0]]))


def test_forest_is_deterministic():
    X = np.random.default_rng(0).normal(size=(300, 4))
    a, b = fit_forest(X, n_trees=10, seed=5), fit_forest(X, n_trees=10, seed=5)
    assert a.to_json() == b.to_json()
    assert fit_forest(X, n_trees=10, seed=6).to_json() != a.to_json()


def test_tree_structure():
    X = np.random.default_rng(1).normal(size=(256, 3))
    forest = fit_forest(X, n_trees=5, psi=64)
    assert forest.height_limit == 6
    for t in forest.trees:
        leaves = t.feature < 0
        assert t.size[leaves].sum() == 64
        assert t.depth.max() <= 6


def test_blob_with_far_outliers():
    rng = np.random.default_rng(0)
    inliers = rng.normal(size=(2000, 2))
    outliers = rng.uniform(6, 10, size=(100, 2)) * rng.choice([-1, 1], size=(100, 2))
    X = np.vstack([inliers, outliers])
    truth = np.r_[np.zeros(2000), np.ones(100)]
    scores = anomaly_score(fit_forest(X, seed=0), X)
    assert roc_auc(scores, truth) >= 0.9
    assert np.all((scores > 0) & (scores < 1))


def test_score_rises_with_distance():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 1))
    forest = fit_forest(X, seed=0)
    probes = np.linspace(0, 4, 100)[:, None]
    rho = spearmanr(probes[:, 0], anomaly_score(forest, probes)).statistic
    assert rho >= 0.95


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), n=st.integers(2, 60), d=st.integers(1, 4))
def test_scores_in_open_interval(seed, n, d):
    X = np.random.default_rng(seed).normal(size=(n, d))
    s = anomaly_score(fit_forest(X, n_trees=8, seed=seed), X)
    assert np.all((s > 0) & (s < 1))


def test_thresholding():
    s = np.array([0.5, 0.51, 0.2])
    assert label_outliers(s).tolist() == [False, True, False]
    assert label_outliers(s, 0.0).all()
    scores = np.random.default_rng(2).random(10_000)
    t = contamination_threshold(scores, 0.096)
    assert label_outliers(scores, t).mean() == pytest.approx(0.096, abs=0.002)


def test_persistence(tmp_path):
    X = np.random.default_rng(3).normal(size=(100, 2))
    forest = fit_forest(X, n_trees=7)
    save_forest(forest, tmp_path / "f.json", threshold=0.6)
    back, threshold = load_forest(tmp_path / "f.json")
    assert threshold == 0.6
    np.testing.assert_array_equal(anomaly_score(back, X), anomaly_score(forest, X))
    s = anomaly_score(forest, X)
    write_scores(tmp_path / "s.csv", [f"h{i}" for i in range(100)], s, s > 0.5)
    df = read_scores(tmp_path / "s.csv")
    np.testing.assert_array_equal(df["score"].to_numpy(), s)
    assert df["flag"].dtype == bool


def test_estimator():
    X = np.random.default_rng(4).normal(size=(400, 3))
    est = IsolationForest(n_trees=20, contamination=0.1).fit(X)
    flags = est.predict(X)
    assert flags.dtype == bool
    assert flags.mean() == pytest.approx(0.1, abs=0.01)
    np.testing.assert_allclose(est.decision_function(X), est.score_samples(X) - est.threshold_)

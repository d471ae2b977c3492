import numpy as np
import pytest

from gliomorph._forest_kernels import logrank_scan
from gliomorph.errors import ValidationError
from gliomorph.rsf import ForestModel, ForestParams, fit, fit_arrays, predict_expected
from gliomorph.survstats import c_index_arrays, km_arrays, logrank_arrays
from gliomorph.volio import FeatureTable, SurvivalRecord

from oracles import rmst_dense


def _data(seed=0, n=80, p=4, beta=1.5):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    t = rng.exponential(np.exp(-beta * X[:, 0]))
    c = rng.exponential(2.0, n)
    return X, np.minimum(t, c), t <= c


def _inbag(seed, k, n):
    rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
    return rng.integers(0, n, size=n)


@pytest.mark.parametrize("seed", range(5))
def test_scan_matches_logrank(seed):
    rng = np.random.default_rng(seed)
    n = 40
    v = np.round(rng.standard_normal(n), 1)
    t = np.ceil(rng.exponential(1.0, n) * 5) / 5 + 0.2
    e = rng.random(n) < 0.7
    order, scores = logrank_scan(v, t, e, min_leaf=3)
    checked = 0
    for pos, score in enumerate(scores):
        left = np.zeros(n, bool)
        left[order[: pos + 1]] = True
        legal = 3 <= pos + 1 <= n - 3 and v[order[pos]] != v[order[pos + 1]]
        if not legal:
            assert score == -1.0
            continue
        ref = logrank_arrays(t, e, left)
        if ref.degenerate:
            continue
        assert score == pytest.approx(ref.chi2, rel=1e-9)
        checked += 1
    assert checked > 10


def test_leaves_are_km_of_inbag_members():
    X, t, e = _data(1)
    params = ForestParams(n_trees=3, seed=5)
    model = fit_arrays(X, t, e, ["a", "b", "c", "d"], params)
    for k, tree in enumerate(model.trees):
        inbag = _inbag(5, k, len(t))
        leaves = tree.apply(X[inbag])
        for leaf in np.unique(leaves):
            members = inbag[leaves == leaf]
            assert len(members) >= params.min_leaf
            ref = km_arrays(t[members], e[members])
            got = tree.leaf_curve(int(leaf))
            np.testing.assert_array_equal(got.times, ref.times)
            np.testing.assert_allclose(got.probs, ref.probs, rtol=1e-12)


def test_root_split_is_best_logrank_split():
    X, t, e = _data(2, n=60, p=3)
    model = fit_arrays(X, t, e, ["a", "b", "c"], ForestParams(n_trees=1, mtry=3, seed=9))
    tree = model.trees[0]
    inbag = _inbag(9, 0, len(t))
    Xb, tb, eb = X[inbag], t[inbag], e[inbag]
    best = -1.0
    for f in range(3):
        for v in np.unique(Xb[:, f])[:-1]:
            left = Xb[:, f] <= v
            if left.sum() < 3 or (~left).sum() < 3:
                continue
            res = logrank_arrays(tb, eb, left)
            if not res.degenerate:
                best = max(best, res.chi2)
    f = tree.feature[0]
    got = logrank_arrays(tb, eb, Xb[:, f] <= tree.threshold[0]).chi2
    assert got == pytest.approx(best, rel=1e-9)


def test_threshold_is_between_training_values():
    X, t, e = _data(3)
    model = fit_arrays(X, t, e, list("abcd"), ForestParams(n_trees=5, seed=1))
    for tree in model.trees:
        for f, thr in zip(tree.feature, tree.threshold):
            if f < 0:
                continue
            col = X[:, f]
            assert (col <= thr).any() and (col > thr).any()


def test_predict_expected_matches_dense_integral():
    X, t, e = _data(4)
    model = fit_arrays(X, t, e, list("abcd"), ForestParams(n_trees=20, seed=2))
    for row in X[:5]:
        curve = model.predict_curve(row)
        dense = rmst_dense(curve, model.training_t_max)
        assert model.predict_expected(row) == pytest.approx(dense, abs=1e-4)
    many = model.predict_expected_many(X[:10])
    single = [model.predict_expected(r) for r in X[:10]]
    np.testing.assert_allclose(many, single, rtol=1e-12)


def test_t_max_is_largest_inbag_event_time():
    X, t, e = _data(5)
    params = ForestParams(n_trees=7, seed=3)
    model = fit_arrays(X, t, e, list("abcd"), params)
    expected = max(t[b][e[b]].max() for b in (_inbag(3, k, len(t)) for k in range(7)))
    assert model.training_t_max == expected


def test_signal_is_learned():
    X, t, e = _data(6, n=150)
    model = fit_arrays(X[:100], t[:100], e[:100], list("abcd"), ForestParams(seed=0))
    pred = model.predict_expected_many(X[100:])
    assert c_index_arrays(pred, t[100:], e[100:]) > 0.7


def test_seed_determinism_and_serialization():
    X, t, e = _data(7)
    params = ForestParams(n_trees=10, seed=42)
    a = fit_arrays(X, t, e, list("abcd"), params)
    b = fit_arrays(X, t, e, list("abcd"), params)
    assert a.to_json() == b.to_json()
    c = fit_arrays(X, t, e, list("abcd"), ForestParams(n_trees=10, seed=43))
    assert c.to_json() != a.to_json()
    again = ForestModel.from_json(a.to_json())
    assert again.to_json() == a.to_json()
    np.testing.assert_array_equal(again.predict_expected_many(X), a.predict_expected_many(X))


def test_tree_order_independence():
    X, t, e = _data(8)
    five = fit_arrays(X, t, e, list("abcd"), ForestParams(n_trees=5, seed=11))
    ten = fit_arrays(X, t, e, list("abcd"), ForestParams(n_trees=10, seed=11))
    for a, b in zip(five.trees, ten.trees):
        np.testing.assert_array_equal(a.feature, b.feature)
        np.testing.assert_array_equal(a.threshold, b.threshold)


def test_monotone_transform_invariance():
    X, t, e = _data(9)
    params = ForestParams(n_trees=15, seed=4)
    base = fit_arrays(X, t, e, list("abcd"), params).predict_expected_many(X)
    Y = X.copy()
    Y[:, 0] = np.exp(Y[:, 0])
    Y[:, 2] = 3.0 * Y[:, 2] + 7.0
    moved = fit_arrays(Y, t, e, list("abcd"), params).predict_expected_many(Y)
    np.testing.assert_allclose(moved, base, rtol=1e-12)


def test_max_depth_and_min_leaf():
    X, t, e = _data(10)
    stump = fit_arrays(X, t, e, list("abcd"), ForestParams(n_trees=3, max_depth=1, seed=0))
    for tree in stump.trees:
        assert tree.n_leaves <= 2
    big_leaf = fit_arrays(X, t, e, list("abcd"), ForestParams(n_trees=3, min_leaf=30, seed=0))
    for k, tree in enumerate(big_leaf.trees):
        counts = np.bincount(tree.apply(X[_inbag(0, k, len(t))]))
        assert counts.min() >= 30


def test_constant_features_flagged():
    X = np.ones((20, 2))
    t = np.arange(1.0, 21.0)
    model = fit_arrays(X, t, np.ones(20, bool), ["a", "b"], ForestParams(n_trees=3))
    assert "all features constant" in model.flags
    assert all(tree.n_leaves == 1 for tree in model.trees)


@pytest.mark.parametrize(
    "kwargs",
    [dict(n_trees=0), dict(max_depth=0), dict(min_leaf=0), dict(mtry=0)],
)
def test_bad_params(kwargs):
    with pytest.raises(ValidationError):
        ForestParams(**kwargs)


def test_fit_errors():
    X, t, e = _data(11, n=20)
    with pytest.raises(ValidationError):
        fit_arrays(X, t, np.zeros(20, bool), list("abcd"))
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValidationError):
        fit_arrays(bad, t, e, list("abcd"))
    with pytest.raises(ValidationError):
        fit_arrays(X, t, e, list("abcd"), ForestParams(mtry=5))
    with pytest.raises(ValidationError):
        fit_arrays(X[:4], t[:4], e[:4], list("abcd"))


def test_table_api_and_missing_prediction_input():
    X, t, e = _data(12, n=30, p=2)
    ids = tuple(f"s{i}" for i in range(30))
    table = FeatureTable(ids, ("a", "b"), X)
    records = [SurvivalRecord(i, ti, ei) for i, ti, ei in zip(ids, t, e)]
    model = fit(table, records, ForestParams(n_trees=5))
    assert predict_expected(model, {"a": 0.1, "b": -0.3}) == model.predict_expected([0.1, -0.3])
    with pytest.raises(ValidationError):
        model.predict_expected({"a": 0.1})
    with pytest.raises(ValidationError):
        model.predict_expected([np.nan, 0.0])

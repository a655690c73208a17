import numpy as np
import pytest

from recallboost.ensemble import BoostParams, Ensemble, train
from recallboost.explain import (GlobalImportance, MissingCoverError, expected_margin,
                                 global_importance, local_accuracy_gap, shap_exact, shap_tree,
                                 shap_tree_batch)
from recallboost.tree import GrowthParams, Tree

from conftest import make_dataset, random_ensemble
from oracles import cover_value, recursive_predict, subsets_shapley

FAMILIES = ("adaboost", "xgb", "lgbm", "catboost_like")


def _stump(feature, thr, lv, rv, cl, cr):
    return Tree([feature, -1, -1], [thr, np.nan, np.nan], [1, -1, -1], [2, -1, -1],
                [0.0, lv, rv], [cl + cr, cl, cr])


# ---- exact oracle itself

def test_exact_matches_explicit_subset_sum():
    rng = np.random.default_rng(0)
    for _ in range(10):
        model, X = random_ensemble(rng, M=int(rng.integers(1, 6)))
        x = rng.normal(size=X.shape[1]).round(1)
        want = subsets_shapley(cover_value(model, x), X.shape[1])
        assert np.allclose(shap_exact(model, x).phi, want, atol=1e-12)


def test_additive_model_interventional():
    # f(x) = 3 * x1 on x1 in {0, 1, 2}, written as a depth-2 tree
    t = Tree([0, 0, -1, -1, -1], [0.5, 1.5, np.nan, np.nan, np.nan], [2, 3, -1, -1, -1],
             [1, 4, -1, -1, -1], [0.0, 0.0, 0.0, 3.0, 6.0], [3, 2, 1, 1, 1])
    model = Ensemble("xgb", ((t, 1.0),), 0.0, 1.0, ("x1", "x2"))
    bg = make_dataset([[0.0, 5.0]], [0])
    a = shap_exact(model, np.array([2.0, -1.0]), background=bg)
    assert a.phi.tolist() == [6.0, 0.0] and a.base_value == 0.0


def test_symmetric_features_share_credit():
    t1 = _stump(0, 0.5, 0.0, 1.0, 5, 5)
    t2 = _stump(1, 0.5, 0.0, 1.0, 5, 5)
    model = Ensemble("xgb", ((t1, 1.0), (t2, 1.0)), 0.0, 1.0, ("a", "b"))
    bg = make_dataset([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]], [0, 1, 0, 1])
    x = np.array([1.0, 1.0])
    for a in (shap_exact(model, x, bg), shap_exact(model, x), shap_tree(model, x)):
        assert a.phi[0] == a.phi[1]


def test_constant_model_is_null():
    model = Ensemble("xgb", ((Tree.leaf(0.4, 10.0), 1.0),), 0.25, 1.0, ("a", "b"))
    bg = make_dataset([[0.0, 1.0]], [0])
    for a in (shap_exact(model, np.zeros(2), bg), shap_tree(model, np.zeros(2))):
        assert a.phi.tolist() == [0.0, 0.0]
        assert a.base_value == pytest.approx(0.65, abs=1e-15)
    imp = global_importance(model, make_dataset(np.zeros((3, 2)), [0, 1, 0]))
    assert imp.values.tolist() == [0.0, 0.0] and imp.ranking.tolist() == [0, 1]


def test_exact_refuses_wide_models():
    model = Ensemble("xgb", ((Tree.leaf(0.0, 1.0), 1.0),), 0.0, 1.0,
                     tuple(f"f{i}" for i in range(16)))
    with pytest.raises(ValueError, match="shap_tree"):
        shap_exact(model, np.zeros(16))


def test_exact_background_checks():
    model = Ensemble("xgb", ((_stump(0, 0.5, 0.0, 1.0, 1, 1), 1.0),), 0.0, 1.0, ("a",))
    with pytest.raises(ValueError):
        shap_exact(model, np.zeros(1), make_dataset(np.zeros((1, 2)), [0]))
    with pytest.raises(ValueError):
        shap_exact(model, np.zeros(2))


# ---- tree algorithm

def test_single_stump_closed_form():
    t = _stump(1, 0.0, -2.0, 3.0, 3, 1)
    model = Ensemble("xgb", ((t, 0.5),), 0.1, 0.5, ("a", "b", "c"))
    expected = 0.1 + 0.5 * (0.75 * -2.0 + 0.25 * 3.0)
    for x in ([9.0, -1.0, 4.0], [9.0, 1.0, 4.0]):
        a = shap_tree(model, np.array(x))
        margin = model.margin(np.array(x))[0]
        assert a.base_value == pytest.approx(expected, abs=1e-15)
        assert a.phi[1] == pytest.approx(margin - expected, abs=1e-15)
        assert a.phi[0] == a.phi[2] == 0.0


def test_tree_matches_exact_on_random_ensembles():
    rng = np.random.default_rng(2024)
    for _ in range(60):
        model, X = random_ensemble(rng)
        for x in (X[0], rng.normal(size=X.shape[1]).round(1)):
            a, b = shap_tree(model, x), shap_exact(model, x)
            assert np.max(np.abs(a.phi - b.phi)) <= 1e-9
            assert abs(a.base_value - b.base_value) <= 1e-9
            assert abs(a.total() - model.margin(x)[0]) <= 1e-6


def test_dummy_feature_gets_exact_zero():
    rng = np.random.default_rng(5)
    for _ in range(20):
        model, X = random_ensemble(rng)
        used = set()
        for t, _ in model.stages:
            used |= t.split_features()
        phi, _ = shap_tree_batch(model, X)
        for j in set(range(X.shape[1])) - used:
            assert np.all(phi[:, j] == 0.0)


def test_stage_additivity():
    rng = np.random.default_rng(6)
    model, X = random_ensemble(rng, M=5)
    while len(model.stages) < 2:
        model, X = random_ensemble(rng, M=5)
    (t1, c1), (t2, c2) = model.stages[:2]
    whole = Ensemble("xgb", ((t1, c1), (t2, c2)), 0.0, 1.0, model.feature_names)
    one = Ensemble("xgb", ((t1, 1.0),), 0.0, 1.0, model.feature_names)
    two = Ensemble("xgb", ((t2, 1.0),), 0.0, 1.0, model.feature_names)
    for x in X[:5]:
        want = c1 * shap_tree(one, x).phi + c2 * shap_tree(two, x).phi
        assert np.max(np.abs(shap_tree(whole, x).phi - want)) <= 1e-9


@pytest.mark.parametrize("family", FAMILIES)
def test_local_accuracy_on_wdbc(wdbc_split, family):
    tr, te = wdbc_split
    model = train(tr, family, BoostParams(n_stages=30, growth=GrowthParams(max_depth=4)))
    phi, base = shap_tree_batch(model, te.features)
    assert phi.shape == (te.n_rows, 30)
    assert local_accuracy_gap(model, te.features, phi, base).max() <= 1e-6
    assert base == pytest.approx(expected_margin(model))


def test_batch_matches_single_rows():
    rng = np.random.default_rng(7)
    model, X = random_ensemble(rng, M=6)
    phi, base = shap_tree_batch(model, X)
    for i in range(X.shape[0]):
        a = shap_tree(model, X[i], instance_id=i)
        assert np.array_equal(a.phi, phi[i]) and a.base_value == base and a.instance_id == i


def test_hand_built_tree_needs_covers():
    t = Tree([0, -1, -1], [0.5, np.nan, np.nan], [1, -1, -1], [2, -1, -1], [0.0, 1.0, 2.0])
    model = Ensemble("xgb", ((t, 1.0),), 0.0, 1.0, ("a",))
    with pytest.raises(MissingCoverError):
        shap_tree(model, np.zeros(1))
    with pytest.raises(MissingCoverError):
        shap_exact(model, np.zeros(1))
    # an explicit background makes the exact method usable without covers
    a = shap_exact(model, np.array([1.0]), make_dataset([[0.0]], [0]))
    assert a.phi.tolist() == [1.0]


def test_global_importance_single_feature_model():
    model = Ensemble("xgb", ((_stump(2, 0.0, -1.0, 1.0, 5, 5), 1.0),), 0.0, 1.0,
                     ("a", "b", "c", "d"))
    ds = make_dataset(np.random.default_rng(0).normal(size=(20, 4)), [0, 1] * 10)
    imp = global_importance(model, ds)
    assert imp.ranking[0] == 2 and imp.ranking[1:].tolist() == [0, 1, 3]
    assert imp.values[2] > 0 and np.count_nonzero(imp.values) == 1
    assert sorted(imp.ranking.tolist()) == [0, 1, 2, 3]
    assert imp.to_csv().splitlines()[1].startswith("1,2,c,")


def test_global_importance_deterministic(wdbc_split):
    tr, te = wdbc_split
    model = train(tr, "xgb", BoostParams(n_stages=20))
    a, b = global_importance(model, te), global_importance(model, te)
    assert isinstance(a, GlobalImportance)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.ranking, b.ranking)
    assert np.all(a.values >= 0)


def test_margin_recomputed_independently():
    rng = np.random.default_rng(8)
    model, X = random_ensemble(rng, M=4)
    for x in X[:5]:
        want = model.base_score + sum(c * recursive_predict(t.to_dict(), x)
                                      for t, c in model.stages)
        assert shap_tree(model, x).total() == pytest.approx(want, abs=1e-9)

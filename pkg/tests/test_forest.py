"""Forest construction, prediction, OOB bookkeeping, and serialization."""

import numpy as np
import pytest

from oob_bands.forest import (
    BagMask,
    ForestConfig,
    build_forest,
    build_tree,
    forest_from_dict,
    forest_to_dict,
    leaf_weights,
    load_forest,
    oob_exclusion_probability,
    oob_residuals,
    predict_forest,
    predict_forest_batch,
    predict_oob,
    predict_tree,
    save_forest,
)


def _mask(counts, mode="subsample"):
    counts = np.asarray(counts, dtype=np.int32)
    return BagMask(counts, mode, int(counts.sum()))


def _stub_forest(values, masks, y_len=2, mode="subsample"):
    """Forest of single-leaf trees with fixed predictions and bag masks."""
    doc = {
        "format_version": 1,
        "config": {
            "num_trees": len(values),
            "mtry": 1,
            "resample_count": int(np.sum(masks[0])),
            "resample_mode": mode,
            "min_node_size": 1,
            "max_terminal_nodes": None,
            "seed": 0,
        },
        "n": y_len,
        "p": 1,
        "trees": [
            {"nodes": [{"value": float(v), "samples": [int(np.argmax(m))]}]}
            for v, m in zip(values, masks)
        ],
        "bag_masks": [list(map(int, m)) for m in masks],
    }
    return forest_from_dict(doc)


# ---------------------------------------------------------------- build_tree

def test_two_point_tree_splits_at_midpoint():
    X = np.array([[0.0], [1.0]])
    y = np.array([0.0, 1.0])
    cfg = ForestConfig(num_trees=1, mtry=1, min_node_size=1, resample_mode="subsample")
    tree = build_tree((X, y), cfg, _mask([1, 1]), rng_stream=0)
    assert tree.n_leaves == 2
    assert float(tree.threshold[0]) == 0.5
    assert predict_tree(tree, [0.4]) == 0.0
    assert predict_tree(tree, [0.6]) == 1.0


def test_pure_node_single_leaf():
    X = np.arange(8.0).reshape(-1, 1)
    y = np.full(8, 7.0)
    cfg = ForestConfig(num_trees=1, mtry=1, min_node_size=1, resample_mode="subsample")
    tree = build_tree((X, y), cfg, _mask([1] * 8), rng_stream=1)
    assert tree.n_leaves == 1
    assert predict_tree(tree, [123.0]) == 7.0


def test_single_in_bag_row():
    X = np.array([[0.0], [5.0]])
    y = np.array([9.0, 3.0])
    cfg = ForestConfig(num_trees=1, mtry=1, min_node_size=1, resample_mode="subsample")
    tree = build_tree((X, y), cfg, _mask([0, 1]), rng_stream=2)
    assert tree.n_leaves == 1
    assert predict_tree(tree, [0.0]) == 3.0


def test_empty_bag_rejected():
    X = np.array([[0.0], [1.0]])
    y = np.array([0.0, 1.0])
    cfg = ForestConfig(num_trees=1, mtry=1, min_node_size=1, resample_mode="subsample")
    bad = BagMask(np.array([0, 1], dtype=np.int32), "subsample", 1)
    object.__setattr__(bad, "counts", np.array([0, 0], dtype=np.int32))
    with pytest.raises(ValueError, match="empty bag"):
        build_tree((X, y), cfg, bad, rng_stream=0)


def test_non_finite_data_rejected():
    X = np.array([[0.0], [np.nan]])
    y = np.array([0.0, 1.0])
    cfg = ForestConfig(num_trees=1)
    with pytest.raises(ValueError, match="non-finite"):
        build_forest((X, y), cfg)
    with pytest.raises(ValueError, match="non-finite"):
        build_forest((np.array([[0.0], [1.0]]), np.array([0.0, np.inf])), cfg)


# -------------------------------------------------------------- predict_tree

def test_boundary_point_routes_left():
    X = np.array([[0.0], [1.0]])
    y = np.array([0.0, 1.0])
    cfg = ForestConfig(num_trees=1, mtry=1, min_node_size=1, resample_mode="subsample")
    tree = build_tree((X, y), cfg, _mask([1, 1]), rng_stream=0)
    assert predict_tree(tree, [float(tree.threshold[0])]) == 0.0


def test_predict_tree_dimension_mismatch():
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    y = np.array([0.0, 1.0])
    cfg = ForestConfig(num_trees=1, mtry=1, min_node_size=1, resample_mode="subsample")
    tree = build_tree((X, y), cfg, _mask([1, 1]), rng_stream=0)
    with pytest.raises(ValueError, match="coordinates"):
        predict_tree(tree, [0.5])


# ------------------------------------------------------------- build_forest

def test_single_tree_forest_equals_tree(small_training_set):
    forest = build_forest(small_training_set, ForestConfig(num_trees=1, seed=3))
    probe = np.random.default_rng(0).random(3)
    assert predict_forest(forest, probe) == predict_tree(forest.trees[0], probe)


def test_same_seed_same_predictions(small_training_set):
    cfg = ForestConfig(num_trees=12, seed=77)
    f1 = build_forest(small_training_set, cfg)
    f2 = build_forest(small_training_set, cfg)
    probes = np.random.default_rng(1).random((50, 3))
    assert np.array_equal(
        predict_forest_batch(f1, probes), predict_forest_batch(f2, probes)
    )


def test_invalid_configs_rejected(small_training_set):
    with pytest.raises(ValueError, match="mtry"):
        build_forest(small_training_set, ForestConfig(num_trees=2, mtry=99))
    with pytest.raises(ValueError, match="resample_count"):
        build_forest(small_training_set, ForestConfig(num_trees=2, resample_count=0))
    with pytest.raises(ValueError, match="num_trees"):
        build_forest(small_training_set, ForestConfig(num_trees=0))
    with pytest.raises(ValueError, match="resample_mode"):
        build_forest(small_training_set, ForestConfig(resample_mode="jackknife"))


def test_bag_multiplicities_per_mode(small_training_set):
    boot = build_forest(small_training_set, ForestConfig(num_trees=8, seed=5))
    for mask in boot.bag_masks:
        assert int(mask.counts.sum()) == 20
    sub = build_forest(
        small_training_set,
        ForestConfig(num_trees=8, seed=5, resample_mode="subsample", resample_count=13),
    )
    for mask in sub.bag_masks:
        assert int(mask.counts.sum()) == 13
        assert mask.counts.max() == 1


def test_max_terminal_nodes_budget(small_training_set):
    forest = build_forest(
        small_training_set,
        ForestConfig(num_trees=10, seed=2, min_node_size=1, max_terminal_nodes=5),
    )
    for tree in forest.trees:
        assert tree.n_leaves <= 5


def test_forest_arrays_frozen(small_training_set):
    forest = build_forest(small_training_set, ForestConfig(num_trees=2, seed=1))
    with pytest.raises(ValueError):
        forest.trees[0].value[0] = 1.0
    with pytest.raises(ValueError):
        forest.bag_masks[0].counts[0] = 3


# -------------------------------------------------- brute-force equivalences

def test_predict_forest_matches_tree_loop(small_training_set):
    forest = build_forest(small_training_set, ForestConfig(num_trees=10, seed=9))
    rng = np.random.default_rng(4)
    for x in rng.random((20, 3)):
        brute = sum(predict_tree(t, x) for t in forest.trees) / forest.num_trees
        assert predict_forest(forest, x) == brute


def test_predict_oob_matches_mask_filter(small_training_set):
    X, y = small_training_set
    forest = build_forest((X, y), ForestConfig(num_trees=10, seed=9))
    for i in range(forest.n):
        oob_trees = [
            t for t, m in zip(forest.trees, forest.bag_masks) if m.counts[i] == 0
        ]
        pred, z = predict_oob(forest, (X, y), i)
        assert z == len(oob_trees)
        if oob_trees:
            brute = sum(predict_tree(t, X[i]) for t in oob_trees) / len(oob_trees)
            assert pred == brute
        else:
            assert pred is None


def test_oob_residuals_match_per_row_loop(small_training_set):
    X, y = small_training_set
    forest = build_forest((X, y), ForestConfig(num_trees=10, seed=9))
    res = oob_residuals(forest, (X, y))
    for i in range(forest.n):
        pred, z = predict_oob(forest, (X, y), i)
        assert res.tree_count[i] == z
        if pred is None:
            assert not res.valid[i]
        else:
            assert res.oob_prediction[i] == pred
            assert res.residual[i] == y[i] - pred


# -------------------------------------------------------- handcrafted cases

def test_predict_forest_two_trees_average():
    forest = _stub_forest([1.0, 3.0], [[0, 1], [0, 1]])
    assert predict_forest(forest, [0.0]) == 2.0


def test_predict_oob_two_oob_trees():
    # row 0 is out of bag for trees 1 and 3 only, predicting 2 and 4
    masks = [[1, 0], [0, 1], [1, 0], [0, 1]]
    forest = _stub_forest([9.0, 2.0, 9.0, 4.0], masks)
    data = (np.array([[0.0], [1.0]]), np.array([5.0, 0.0]))
    pred, z = predict_oob(forest, data, 0)
    assert (pred, z) == (3.0, 2)


def test_predict_oob_absent_when_always_in_bag():
    masks = [[1, 0], [1, 0]]
    forest = _stub_forest([1.0, 2.0], masks)
    data = (np.array([[0.0], [1.0]]), np.array([5.0, 0.0]))
    assert predict_oob(forest, data, 0) == (None, 0)


def test_oob_residual_value():
    masks = [[1, 0], [0, 1], [1, 0], [0, 1]]
    forest = _stub_forest([9.0, 2.0, 9.0, 4.0], masks)
    data = (np.array([[0.0], [1.0]]), np.array([5.0, 9.0]))
    res = oob_residuals(forest, data)
    assert res.residual[0] == 2.0  # y=5 against OOB prediction 3


def test_oob_residuals_error_when_uncovered():
    X = np.arange(6.0).reshape(-1, 1)
    y = np.arange(6.0)
    forest = build_forest(
        (X, y),
        ForestConfig(num_trees=1, resample_mode="subsample", resample_count=6, seed=0),
    )
    with pytest.raises(ValueError, match="no out-of-bag coverage"):
        oob_residuals(forest, (X, y))


# --------------------------------------------------- exclusion probabilities

def test_oob_exclusion_probability_values():
    assert oob_exclusion_probability(2, 2, "bootstrap") == 0.25
    assert oob_exclusion_probability(10, 10, "subsample") == 0.0
    assert oob_exclusion_probability(10, 4, "subsample") == pytest.approx(0.6)
    # frozen from exp(n*log1p(-1/n)) at n=1000
    assert oob_exclusion_probability(1000, 1000, "bootstrap") == pytest.approx(
        0.36769542477096406, abs=1e-13
    )
    with pytest.raises(ValueError):
        oob_exclusion_probability(10, 0, "bootstrap")
    with pytest.raises(ValueError):
        oob_exclusion_probability(10, 11, "subsample")


def test_subsample_exclusion_rate_is_exact():
    # every subsample tree excludes exactly n - a_n rows
    rng = np.random.default_rng(11)
    X = rng.random((50, 2))
    y = rng.random(50)
    forest = build_forest(
        (X, y),
        ForestConfig(num_trees=20, resample_mode="subsample", resample_count=31, seed=4),
    )
    res = oob_residuals(forest, (X, y))
    assert np.mean(res.tree_count / 20) == pytest.approx((50 - 31) / 50, abs=1e-12)


# ---------------------------------------------------------------- leaf weights

def test_leaf_weights_single_leaf_uniform():
    rng = np.random.default_rng(5)
    X = rng.random((12, 2))
    y = rng.random(12)
    forest = build_forest(
        (X, y),
        ForestConfig(
            num_trees=1, min_node_size=50, resample_mode="subsample", resample_count=12, seed=0
        ),
    )
    w = leaf_weights(forest, [0.5, 0.5])
    assert np.allclose(w, 1.0 / 12.0, atol=1e-15)


def _brute_force_weights(forest, x):
    n = forest.n
    w = np.zeros(n)
    for tree in forest.trees:
        nid = 0
        while tree.feature[nid] >= 0:
            if x[tree.feature[nid]] <= tree.threshold[nid]:
                nid = int(tree.left[nid])
            else:
                nid = int(tree.right[nid])
        members = tree.samples[tree.node_start[nid]:tree.node_end[nid]]
        for k in members:
            w[k] += 1.0 / len(members)
    return w / forest.num_trees


@pytest.mark.parametrize("mode,a_n", [("subsample", 10), ("bootstrap", None)])
def test_leaf_weights_match_brute_force(mode, a_n):
    rng = np.random.default_rng(17)
    X = rng.random((15, 3))
    y = rng.random(15)
    forest = build_forest(
        (X, y),
        ForestConfig(num_trees=5, min_node_size=2, resample_mode=mode,
                     resample_count=a_n, seed=21),
    )
    for x in rng.random((5, 3)):
        w = leaf_weights(forest, x)
        assert np.all(w >= 0.0) and np.all(w <= 1.0)
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.max(np.abs(w - _brute_force_weights(forest, x))) <= 1e-12


def test_leaf_weights_reproduce_prediction_in_subsample_mode():
    rng = np.random.default_rng(23)
    X = rng.random((18, 3))
    y = rng.random(18)
    forest = build_forest(
        (X, y),
        ForestConfig(num_trees=6, min_node_size=2, resample_mode="subsample",
                     resample_count=12, seed=1),
    )
    for x in rng.random((4, 3)):
        assert leaf_weights(forest, x) @ y == pytest.approx(
            predict_forest(forest, x), rel=1e-12
        )


# ------------------------------------------------------------------ invariants

def test_oob_prediction_ignores_in_bag_trees(small_training_set):
    X, y = small_training_set
    forest = build_forest((X, y), ForestConfig(num_trees=12, seed=31))
    i = 0
    pred, z = predict_oob(forest, (X, y), i)
    assert z > 0
    # recompute keeping only the trees that excluded row i
    kept = [
        (t, m) for t, m in zip(forest.trees, forest.bag_masks) if m.counts[i] == 0
    ]
    manual = sum(predict_tree(t, X[i]) for t, _ in kept) / len(kept)
    assert pred == manual


def test_monotone_feature_transform_keeps_partition(small_training_set):
    # a strictly increasing remap of a feature moves thresholds but leaves
    # the split structure and the partition of the in-bag rows unchanged
    # (midpoints can shift relative to rows the tree never saw, so only
    # in-bag memberships are order-determined)
    X, y = small_training_set
    cfg = ForestConfig(num_trees=8, seed=13, min_node_size=2)
    forest = build_forest((X, y), cfg)
    X2 = X.copy()
    X2[:, 1] = np.exp(3.0 * X2[:, 1])  # strictly increasing
    forest2 = build_forest((X2, y), cfg)

    for t1, t2 in zip(forest.trees, forest2.trees):
        assert np.array_equal(t1.feature, t2.feature)
        assert np.array_equal(t1.left, t2.left)
        assert np.array_equal(t1.samples, t2.samples)
        assert np.array_equal(t1.node_start, t2.node_start)
        assert np.array_equal(t1.node_end, t2.node_end)
        assert np.array_equal(t1.value, t2.value)
        changed = t1.feature == 1
        if changed.any():
            assert not np.array_equal(
                t1.threshold[changed], t2.threshold[changed]
            )


# --------------------------------------------------------------- serialization

def test_roundtrip_through_json_file(tmp_path, small_training_set):
    X, y = small_training_set
    forest = build_forest((X, y), ForestConfig(num_trees=6, seed=8))
    path = tmp_path / "model.json"
    save_forest(forest, path)
    loaded = load_forest(path)
    probes = np.random.default_rng(2).random((40, 3))
    assert np.array_equal(
        predict_forest_batch(forest, probes), predict_forest_batch(loaded, probes)
    )
    for m1, m2 in zip(forest.bag_masks, loaded.bag_masks):
        assert np.array_equal(m1.counts, m2.counts)
    res1 = oob_residuals(forest, (X, y))
    res2 = oob_residuals(loaded, (X, y))
    assert np.array_equal(res1.residual, res2.residual, equal_nan=True)
    w1 = leaf_weights(forest, probes[0])
    w2 = leaf_weights(loaded, probes[0])
    assert np.array_equal(w1, w2)


def test_unknown_format_version_rejected(small_training_set):
    forest = build_forest(small_training_set, ForestConfig(num_trees=2, seed=8))
    doc = forest_to_dict(forest)
    doc["format_version"] = 999
    with pytest.raises(ValueError, match="format_version"):
        forest_from_dict(doc)

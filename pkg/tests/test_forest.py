import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crystalseg.errors import ContractError, ModelFormatError
from crystalseg.forest import (
    CLASS_NAMES,
    ClassLabel,
    ForestParams,
    SplitMix64,
    gini,
    load_model,
    model_from_json,
    model_to_json,
    predict,
    predict_batch,
    predict_votes,
    save_model,
    train,
    tree_stream,
)

from oracles import gini_direct


def blobs(rng, n, n_classes=2, scale=10.0):
    """Unit-variance blobs; two classes sit *scale* apart, more classes are offset by *scale* on their own axis."""
    y = np.arange(n) % n_classes
    X = rng.normal(size=(n, 5))
    offset = scale / np.sqrt(2) if n_classes == 2 else scale
    X[:, :n_classes] += offset * np.eye(n_classes)[y]
    return X, y


def test_class_encoding():
    assert [c.value for c in ClassLabel] == [0, 1, 2, 3, 4]
    assert CLASS_NAMES[ClassLabel.MISORIENTED] == "Misoriented"
    assert ClassLabel.parse("StackingFault") == ClassLabel.parse("0") == ClassLabel.parse("stacking_fault") == 0
    with pytest.raises(ContractError):
        ClassLabel.parse("Amorphous")


def test_gini_examples():
    assert gini([10, 0, 0, 0, 0]) == 0
    assert gini([5, 5, 0, 0, 0]) == 0.5
    assert gini([1, 1, 1, 1, 1]) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        gini([0, 0, 0, 0, 0])


@given(st.lists(st.integers(0, 50), min_size=5, max_size=5).filter(lambda c: sum(c) > 0))
def test_gini_bounds(counts):
    g = gini(counts)
    assert g == pytest.approx(gini_direct(counts))
    assert -1e-15 <= g <= 1 - 1 / 5 + 1e-12
    assert (g == 0) == (sum(1 for c in counts if c) == 1)


def test_splitmix64_reference_values():
    g = SplitMix64(0)
    assert [g.next() for _ in range(3)] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_tree_streams_follow_base_generator():
    base = SplitMix64(42)
    outputs = [base.next() for _ in range(3)]
    assert [tree_stream(42, i).state for i in range(3)] == outputs


def test_below_range():
    g = SplitMix64(7)
    vals = [g.below(5) for _ in range(2000)]
    assert set(vals) == {0, 1, 2, 3, 4}


def test_single_class_model(rng):
    X = rng.normal(size=(30, 5))
    with pytest.warns(UserWarning, match="single class"):
        model = train(X, [ClassLabel.MISORIENTED] * 30, ForestParams(n_trees=7), seed=3)
    assert all(t.n_nodes == 1 for t in model.trees)
    labels, votes = predict_batch(model, rng.normal(size=(20, 5)) * 100)
    assert (labels == ClassLabel.MISORIENTED).all()
    assert (votes[:, ClassLabel.MISORIENTED] == 7).all()


def test_two_blobs(rng):
    X, y = blobs(rng, 200)
    Xt, yt = blobs(rng, 200)
    model = train(X, y, ForestParams(n_trees=100), seed=1)
    assert (predict_batch(model, X)[0] == y).mean() == 1.0
    assert (predict_batch(model, Xt)[0] == yt).mean() >= 0.95


def test_determinism_and_seed_sensitivity(rng):
    X, y = blobs(rng, 80, 3)
    a = model_to_json(train(X, y, ForestParams(n_trees=20), seed=9))
    b = model_to_json(train(X, y, ForestParams(n_trees=20), seed=9))
    c = model_to_json(train(X, y, ForestParams(n_trees=20), seed=10))
    assert a == b and a != c


def test_parallel_training_identical(rng):
    X, y = blobs(rng, 60, 3)
    a = model_to_json(train(X, y, ForestParams(n_trees=12), seed=5, jobs=1))
    b = model_to_json(train(X, y, ForestParams(n_trees=12), seed=5, jobs=3))
    assert a == b


def test_votes_sum_to_n_trees(rng):
    X, y = blobs(rng, 60, 4)
    model = train(X, y, ForestParams(n_trees=15), seed=2)
    votes = predict_votes(model, rng.normal(size=(100, 5)) * 5)
    assert (votes.sum(axis=1) == 15).all()
    label, v = predict(model, X[0])
    assert isinstance(label, ClassLabel) and v.sum() == 15
    with pytest.raises(ContractError):
        predict(model, np.array([0, 0, np.nan, 0, 0]))


def _route(tree, X, idx, node=0):
    yield node, idx
    if tree.feature[node] >= 0:
        go = X[idx, tree.feature[node]] <= tree.threshold[node]
        yield from _route(tree, X, idx[go], tree.left[node])
        yield from _route(tree, X, idx[~go], tree.right[node])


@pytest.mark.parametrize("min_leaf", [1, 3])
def test_splits_strictly_reduce_impurity(rng, min_leaf):
    X, y = blobs(rng, 120, 5, scale=1.5)
    X = np.round(X, 1)  # plenty of ties
    model = train(X, y, ForestParams(n_trees=10, min_leaf=min_leaf), seed=11)
    for i, tree in enumerate(model.trees):
        g = tree_stream(11, i)
        sample = np.array([g.below(len(y)) for _ in range(len(y))])
        seen = dict()
        for node, idx in _route(tree, X, sample):
            seen[node] = idx
        for node in range(tree.n_nodes):
            idx = seen[node]
            counts = np.bincount(y[idx], minlength=5)
            if tree.feature[node] < 0:
                np.testing.assert_array_equal(tree.counts[node], counts)
                assert counts.sum() >= min_leaf
                assert tree.label[node] == int(np.argmax(counts))
            else:
                li, ri = seen[tree.left[node]], seen[tree.right[node]]
                assert li.size >= min_leaf and ri.size >= min_leaf
                child = (li.size * gini(np.bincount(y[li], minlength=5))
                         + ri.size * gini(np.bincount(y[ri], minlength=5))) / idx.size
                assert child < gini(counts)


def test_monotone_transform_invariance(rng):
    X, y = blobs(rng, 150, 5, scale=5)
    Xt, _ = blobs(rng, 100, 5, scale=5)
    X3, Xt3 = X.copy(), Xt.copy()
    X3[:, 3] **= 3
    Xt3[:, 3] **= 3
    a = train(X, y, ForestParams(n_trees=40), seed=4)
    b = train(X3, y, ForestParams(n_trees=40), seed=4)
    # splits depend on order only: identical topology, features and leaf counts
    for ta, tb in zip(a.trees, b.trees):
        np.testing.assert_array_equal(ta.feature, tb.feature)
        np.testing.assert_array_equal(ta.counts, tb.counts)
        np.testing.assert_array_equal(ta.threshold[ta.feature != 3], tb.threshold[tb.feature != 3])
    np.testing.assert_array_equal(predict_batch(a, Xt)[0], predict_batch(b, Xt3)[0])


def test_class_weight_changes_leaf_labels():
    X = np.zeros((4, 5))
    y = [0, 0, 0, 1]
    plain = train(X, y, ForestParams(n_trees=30), seed=0)
    weighted = train(X, y, ForestParams(n_trees=30, class_weight=[1, 10, 1, 1, 1]), seed=0)
    assert predict(plain, X[0])[0] == 0
    assert predict(weighted, X[0])[0] == 1
    back = model_from_json(model_to_json(weighted))
    np.testing.assert_array_equal(predict_votes(back, X), predict_votes(weighted, X))


def test_train_preconditions(rng):
    with pytest.raises(ContractError):
        train(np.zeros((1, 5)), [0])
    with pytest.raises(ContractError):
        train(np.array([[np.inf] * 5, [0] * 5]), [0, 1])
    with pytest.raises(ContractError):
        train(np.zeros((2, 5)), [0, 7])
    with pytest.raises(ContractError):
        train(np.zeros((3, 5)), [0, 1])
    with pytest.raises(ValueError):
        train(np.zeros((2, 5)), [0, 1], ForestParams(max_features=6))


def test_save_load_round_trip(tmp_path, rng):
    X, y = blobs(rng, 100, 5, scale=2)
    model = train(X, y, ForestParams(n_trees=25), seed=8, pad_to=128, feature_config={"include_dc": False})
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    probe = rng.normal(size=(100, 5)) * 3
    np.testing.assert_array_equal(predict_votes(back, probe), predict_votes(model, probe))
    assert back.pad_to == 128 and back.seed == 8 and back.feature_config == {"include_dc": False}
    assert model_to_json(back) == (tmp_path / "m.json").read_text()


def test_model_file_layout(rng):
    X, y = blobs(rng, 40, 2)
    doc = json.loads(model_to_json(train(X, y, ForestParams(n_trees=3), seed=1, pad_to=64)))
    assert doc["format_version"] == 1 and doc["n_trees"] == 3 == len(doc["trees"])
    assert doc["classes"] == list(CLASS_NAMES) and doc["pad_to"] == 64
    assert doc["params"]["max_features"] == 2 and doc["params"]["seed"] == 1
    root = doc["trees"][0]
    assert set(root) == {"f", "t", "l", "r"} or set(root) == {"leaf"}


def test_model_errors(tmp_path, rng):
    X, y = blobs(rng, 40, 2)
    text = model_to_json(train(X, y, ForestParams(n_trees=2), seed=1))
    with pytest.raises(ModelFormatError, match="version mismatch"):
        model_from_json(text.replace('"format_version":1', '"format_version":2'))
    (tmp_path / "empty.json").write_text("")
    with pytest.raises(ModelFormatError, match="truncated"):
        load_model(tmp_path / "empty.json")
    with pytest.raises(ModelFormatError, match="truncated"):
        model_from_json(text[: len(text) // 2])
    with pytest.raises(ModelFormatError, match="class table"):
        model_from_json(text.replace("Misoriented", "Tilted"))
    with pytest.raises(ModelFormatError):
        model_from_json(text.replace('"n_trees":2', '"n_trees":3'))

import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from logvote.core import Label, LogSequence
from logvote.models import (
    SlfnModel,
    Vectorizer,
    forward,
    gini,
    init_slfn,
    load_model,
    loss_and_grads,
    predict_dt,
    predict_knn,
    predict_slfn,
    save_model,
    to_count_vector,
    train_dt,
    train_knn,
    train_slfn,
)


# -- oracles (deliberately naive, pure python)


def knn_oracle(points, labels, x, k):
    d = sorted((sum((p - q) ** 2 for p, q in zip(pt, x)), i) for i, pt in enumerate(points))
    votes = [labels[i] for _, i in d[:k]]
    return Label.ANOMALOUS if sum(votes) > k / 2 else Label.NORMAL


def best_stump_accuracy(X, y):
    def acc(groups):
        return sum(max(g.count(0), g.count(1)) for g in groups if g) / len(y)

    best = acc([list(y)])
    for f in range(len(X[0])):
        for t in sorted({row[f] for row in X}):
            left = [lab for row, lab in zip(X, y) if row[f] <= t]
            right = [lab for row, lab in zip(X, y) if row[f] > t]
            best = max(best, acc([left, right]))
    return best


def numeric_grads(params, X, y, h=1e-6):
    out = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up, _ = loss_and_grads(params, X, y)
            arr[idx] = orig - h
            down, _ = loss_and_grads(params, X, y)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out[name] = g
    return out


# -- count vectors


def test_count_vector_examples():
    assert to_count_vector(LogSequence((0, 1, 0)), 3).tolist() == [2, 1, 0]
    assert to_count_vector([2], 3).tolist() == [0, 0, 1]
    with pytest.raises(ValueError):
        to_count_vector([3], 3)


def test_count_vector_long_trace():
    r = random.Random(0)
    ids = [r.randrange(175) for _ in range(461)]
    v = to_count_vector(ids, 175)
    hist = [0] * 175
    for i in ids:
        hist[i] += 1
    assert v.tolist() == hist and v.sum() == 461


@given(st.lists(st.integers(0, 9), min_size=1, max_size=30), st.randoms())
def test_count_vector_permutation_invariant(ids, rnd):
    shuffled = list(ids)
    rnd.shuffle(shuffled)
    assert np.array_equal(to_count_vector(ids, 10), to_count_vector(shuffled, 10))


def test_vectorizer_overflow_bucket():
    vec = Vectorizer(3)
    v = vec.transform_one([0, 2, 5, 9])
    assert v.tolist() == [1, 0, 1, 2]
    assert v.sum() == 4


# -- knn


def test_knn_config_errors():
    with pytest.raises(ValueError):
        train_knn([[0.0]], [0], k=0)
    with pytest.raises(ValueError):
        train_knn([[0.0]], [0], k=2)


def test_knn_exact_match_and_tie():
    m = train_knn([[0, 0], [5, 5]], [0, 1], k=1)
    assert predict_knn(m, [5, 5]) is Label.ANOMALOUS
    m2 = train_knn([[0, 0], [1, 1], [9, 9]], [0, 1, 1], k=2)
    assert predict_knn(m2, [0.4, 0.4]) is Label.NORMAL  # one vote each
    with pytest.raises(ValueError):
        predict_knn(m2, [1, 2, 3])


def test_knn_five_point_fixture():
    pts = [[0, 0], [1, 0], [0, 2], [4, 4], [5, 3]]
    labs = [0, 1, 1, 1, 0]
    m = train_knn(pts, labs, k=3)
    for x in ([0, 1], [3, 3], [2, 2], [5, 5]):
        assert predict_knn(m, x) == knn_oracle(pts, labs, x, 3)


@settings(max_examples=50)
@given(st.integers(0, 2**31), st.integers(1, 3))
def test_knn_matches_oracle(seed, k):
    r = random.Random(seed)
    n, dim = r.randint(k, 20), r.randint(1, 6)
    pts = [[r.randint(0, 3) for _ in range(dim)] for _ in range(n)]
    labs = [r.randint(0, 1) for _ in range(n)]
    m = train_knn(pts, labs, k)
    for _ in range(5):
        x = [r.randint(0, 3) for _ in range(dim)]
        assert predict_knn(m, x) == knn_oracle(pts, labs, x, k)


# -- decision tree


def test_dt_single_class():
    m = train_dt([[1.0], [2.0]], [1, 1])
    assert m.root.is_leaf and m.root.label == 1


def test_dt_separable_1d():
    m = train_dt([[0.0], [10.0]], [0, 1])
    assert not m.root.is_leaf
    assert 0 < m.root.threshold < 10
    assert predict_dt(m, [0.0]) is Label.NORMAL and predict_dt(m, [10.0]) is Label.ANOMALOUS


def test_dt_stump_descent():
    m = train_dt([[3.0, 0.0], [4.0, 1.0], [6.0, 0.0], [7.0, 1.0]], [0, 0, 1, 1], max_depth=1)
    assert m.root.feature == 0 and m.root.threshold == 5.0
    assert predict_dt(m, [7.0, 0.0]) is Label.ANOMALOUS


def test_dt_empty_and_dim_errors():
    with pytest.raises(ValueError):
        train_dt(np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        predict_dt(train_dt([[0.0], [1.0]], [0, 1]), [0.0, 1.0])


def test_dt_beats_best_stump_on_fixture():
    r = random.Random(5)
    X = [[r.randint(0, 4) for _ in range(3)] for _ in range(20)]
    y = [int(row[0] + row[2] > 4) ^ (r.random() < 0.1) for row in X]
    m = train_dt(X, y)
    acc = np.mean([int(predict_dt(m, row)) == lab for row, lab in zip(X, y)])
    assert acc >= best_stump_accuracy(X, y)


def test_dt_tie_leaf_is_normal():
    # identical inputs, opposite labels: no split can separate them
    m = train_dt([[1.0], [1.0]], [1, 0])
    assert m.root.is_leaf and m.root.label == 0


def test_gini():
    assert gini([5, 0]) == 0.0
    assert gini([2, 2]) == 0.5


# -- slfn


def test_slfn_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for trial in range(5):
        d, h = rng.integers(1, 6), rng.integers(1, 5)
        model = init_slfn(int(d), int(h), seed=trial)
        params = {k: v.astype(float).copy() for k, v in model.params().items()}
        params["b1"] += rng.normal(0, 0.3, size=params["b1"].shape)
        X = rng.normal(size=(7, d))
        y = rng.integers(0, 2, size=7)
        _, analytic = loss_and_grads(params, X, y)
        numeric = numeric_grads(params, X, y)
        for name in params:
            num = np.linalg.norm(analytic[name] - numeric[name])
            den = max(np.linalg.norm(analytic[name]) + np.linalg.norm(numeric[name]), 1e-12)
            assert num / den < 1e-4, name


def separable_fixture(seed=0, n=40):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal([-2, -2], 0.5, size=(n // 2, 2)), rng.normal([2, 2], 0.5, size=(n // 2, 2))])
    y = np.array([0] * (n // 2) + [1] * (n // 2))
    return X, y


def perceptron_separates(X, y, epochs=1000):
    Xb = np.hstack([X, np.ones((len(X), 1))])
    w = np.zeros(Xb.shape[1])
    s = 2 * y - 1
    for _ in range(epochs):
        errors = 0
        for xi, si in zip(Xb, s):
            if si * (xi @ w) <= 0:
                w += si * xi
                errors += 1
        if errors == 0:
            return True
    return False


def test_slfn_fits_separable_data():
    X, y = separable_fixture()
    assert perceptron_separates(X, y)
    m = train_slfn(X, y, epochs=200)
    preds = [int(predict_slfn(m, x)) for x in X]
    assert preds == y.tolist()
    assert m.loss_history[-1] <= m.loss_history[0]


def test_slfn_single_class():
    X = np.array([[1.0, 0.0], [0.0, 3.0], [2.0, 2.0]])
    m = train_slfn(X, [1, 1, 1])
    assert all(predict_slfn(m, x) is Label.ANOMALOUS for x in X)


def test_slfn_deterministic():
    X, y = separable_fixture(3)
    a, b = train_slfn(X, y, epochs=20, seed=9), train_slfn(X, y, epochs=20, seed=9)
    for k in a.params():
        assert np.array_equal(a.params()[k], b.params()[k])


def test_slfn_zero_network_ties_to_normal():
    m = SlfnModel(np.zeros((4, 3)), np.zeros(4), np.zeros((2, 4)), np.zeros(2))
    assert predict_slfn(m, np.zeros(3)) is Label.NORMAL


def test_slfn_output_shape():
    m = init_slfn(5, 100, 0)
    assert m.W1.shape == (100, 5) and m.W2.shape == (2, 100)
    s = np.sqrt(6 / 105)
    assert np.all(np.abs(m.W1) <= s)
    z, _ = forward(m.params(), np.ones((3, 5)))
    assert z.shape == (3, 2)


# -- persistence


@pytest.mark.parametrize("kind", ["knn", "dt", "slfn"])
def test_model_round_trip(tmp_path, kind):
    X, y = separable_fixture(1, 20)
    model = {"knn": lambda: train_knn(X, y, 2), "dt": lambda: train_dt(X, y), "slfn": lambda: train_slfn(X, y, 10)}[kind]()
    save_model(model, tmp_path / "m.json")
    loaded = load_model(tmp_path / "m.json")
    grid = np.random.default_rng(2).normal(0, 2, size=(30, 2))
    assert loaded.predict(grid) == model.predict(grid)


def test_load_rejects_foreign_file(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_model(tmp_path / "x.json")

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbmil.svmcore import (KernelSpec, SVMModel, default_gamma_grid, dual_objective,
                           grid_search, stratified_folds, train_svm)


def kkt_violation(model, x, y, C):
    """Largest breach of the margin conditions over the training rows."""
    f = y * model.decision(x)
    a = model.alpha
    worst = 0.0
    for ai, fi in zip(a, f):
        if ai <= 0:
            worst = max(worst, 1 - fi)
        elif ai >= C:
            worst = max(worst, fi - 1)
        else:
            worst = max(worst, abs(fi - 1))
    return worst


def random_problem(rng, n=40, d=3, separable=True):
    x = rng.normal(size=(n, d))
    y = np.where(x[:, 0] + 0.3 * x[:, 1] > 0, 1.0, -1.0)
    if separable:
        x[:, 0] += 0.5 * y
    else:
        flip = rng.random(n) < 0.15
        y[flip] *= -1
    if np.all(y == y[0]):
        y[0] = -y[0]
    return x, y


def test_two_point_analytic():
    x = np.array([[1.0, 0.0], [0.0, 0.0]])
    y = np.array([1.0, -1.0])
    m = train_svm(x, y, C=10.0)
    # w = (2, 0), b = -1, alpha = 2 for both points
    np.testing.assert_allclose(m.decision(x), [1.0, -1.0], atol=1e-3)
    assert m.decision(np.array([0.5, 0.0])) == pytest.approx(0.0, abs=1e-3)
    np.testing.assert_allclose(m.alpha, [2.0, 2.0], atol=1e-3)
    assert m.bias == pytest.approx(-1.0, abs=1e-3)


def test_two_point_capped_by_c():
    x = np.array([[1.0, 0.0], [0.0, 0.0]])
    m = train_svm(x, np.array([1.0, -1.0]), C=0.5)
    np.testing.assert_allclose(m.alpha, [0.5, 0.5], atol=1e-9)


@pytest.mark.parametrize("separable", [True, False])
@pytest.mark.parametrize("kind", ["linear", "rbf"])
def test_kkt_holds(separable, kind):
    rng = np.random.default_rng(7 + separable)
    for _ in range(5):
        x, y = random_problem(rng, separable=separable)
        C = float(rng.choice([0.1, 1.0, 10.0]))
        m = train_svm(x, y, C=C, kernel=KernelSpec(kind, 0.5), tol=1e-3)
        assert kkt_violation(m, x, y, C) <= 1e-3 + 1e-9
        assert abs(np.dot(m.alpha, y)) < 1e-9
        assert np.all(m.alpha >= 0) and np.all(m.alpha <= C + 1e-12)


def test_feasible_perturbations_do_not_improve_dual(rng):
    x, y = random_problem(rng, n=30, separable=False)
    C = 1.0
    m = train_svm(x, y, C=C, tol=1e-8)
    K = x @ x.T
    best = dual_objective(m.alpha, K, y)
    for _ in range(300):
        i, j = rng.choice(len(y), 2, replace=False)
        step = rng.normal() * 0.05
        a = m.alpha.copy()
        a[i] += step * y[i]
        a[j] -= step * y[j]
        if np.all(a >= 0) and np.all(a <= C):
            assert dual_objective(a, K, y) <= best + 1e-7


def test_xor_with_rbf():
    x = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], float)
    y = np.array([1, 1, -1, -1], float)
    m = train_svm(x, y, C=100.0, kernel=KernelSpec("rbf", 2.0))
    np.testing.assert_array_equal(m.predict(x), y)
    linear = train_svm(x, y, C=100.0)
    assert np.mean(linear.predict(x) == y) < 1.0


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.floats(0.01, 10.0), st.integers(0, 1000))
def test_rbf_gram_is_psd(n, gamma, seed):
    x = np.random.default_rng(seed).normal(size=(n, 3))
    K = KernelSpec("rbf", gamma)(x, x)
    np.testing.assert_allclose(K, K.T)
    assert np.linalg.eigvalsh(K).min() > -1e-9
    np.testing.assert_allclose(np.diag(K), 1.0)


def test_seed_only_reorders():
    rng = np.random.default_rng(3)
    x, y = random_problem(rng)
    a = train_svm(x, y, C=1.0, tol=1e-6)
    b = train_svm(x, y, C=1.0, tol=1e-6, seed=5)
    np.testing.assert_allclose(a.decision(x), b.decision(x), atol=1e-4)
    c = train_svm(x, y, C=1.0, tol=1e-6)
    assert a.dumps() == c.dumps()


def test_input_validation():
    x = np.zeros((3, 2))
    with pytest.raises(ValueError, match="single class"):
        train_svm(x, np.ones(3))
    with pytest.raises(ValueError):
        train_svm(x, np.array([1, 0, -1]))
    with pytest.raises(ValueError):
        train_svm(x, np.array([1, -1, 1]), C=0.0)
    with pytest.raises(ValueError):
        KernelSpec("poly")
    with pytest.raises(ValueError):
        KernelSpec("rbf", 0.0)


def test_serialization_round_trip():
    rng = np.random.default_rng(4)
    x, y = random_problem(rng)
    m = train_svm(x, y, kernel=KernelSpec("rbf", 0.3))
    back = SVMModel.loads(m.dumps())
    np.testing.assert_array_equal(back.decision(x), m.decision(x))
    with pytest.raises(ValueError):
        m.decision(np.zeros(5))


def test_default_gamma_grid():
    np.testing.assert_allclose(default_gamma_grid(4), [2.0 ** j / 4 for j in range(-3, 4)])


def test_stratified_folds_balance():
    labels = np.array([1] * 9 + [-1] * 6)
    folds = stratified_folds(labels, 3, 0)
    for f in range(3):
        assert np.sum((folds == f) & (labels == 1)) == 3
        assert np.sum((folds == f) & (labels == -1)) == 2


def _fixed_predictor(acc_by_c):
    def train(params, items, labels):
        good = acc_by_c[params["C"]]
        return lambda xs: [x if good else -x for x in xs]
    return train


def test_grid_search_picks_perfect_point():
    items = [1, -1] * 6
    labels = np.array(items)
    best, scores = grid_search(items, labels, _fixed_predictor({0.1: False, 1.0: True}),
                               {"C": (0.1, 1.0)})
    assert best == {"C": 1.0}
    assert scores[(1.0,)] == 1.0 and scores[(0.1,)] == 0.0


def test_grid_search_ties_prefer_smaller_values():
    items = [1, -1] * 6
    labels = np.array(items)
    train = lambda params, xs, ys: (lambda q: list(q))
    best, _ = grid_search(items, labels, train, {"C": (10.0, 0.1, 1.0), "gamma": (2.0, 0.5)})
    assert best == {"C": 0.1, "gamma": 0.5}


def test_grid_search_single_point_and_empty():
    best, scores = grid_search([1, -1], np.array([1, -1]), None, {"C": (3.0,)})
    assert best == {"C": 3.0} and scores == {}
    with pytest.raises(ValueError):
        grid_search([1, -1], np.array([1, -1]), None, {"C": ()})

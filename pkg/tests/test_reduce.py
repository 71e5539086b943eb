import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gbmil.reduce import Reducer, Standardizer, fit_pca, fit_reducer, fit_standardizer, transform


def test_points_on_a_line_keep_one_component(rng):
    t = rng.normal(size=200)
    direction = np.array([1.0, -2.0, 0.5])
    x = t[:, None] * direction
    p = fit_pca(x)
    assert p.d_out == 1
    np.testing.assert_allclose(abs(p.components[0] @ direction) / np.linalg.norm(direction), 1.0)


@pytest.mark.parametrize("d", [5, 10, 20])
def test_isotropic_keeps_about_95_percent_of_dims(d):
    x = np.random.default_rng(d).normal(size=(20000, d))
    p = fit_pca(x)
    assert abs(p.d_out - math.ceil(0.95 * d)) <= 1


def test_eigen_residual_and_order(rng):
    x = rng.normal(size=(300, 6)) @ rng.normal(size=(6, 6))
    p = fit_pca(x, variance=1.0)
    xc = x - x.mean(0)
    cov = xc.T @ xc / (len(x) - 1)
    for v, lam in zip(p.components, p.eigenvalues):
        assert np.linalg.norm(cov @ v - lam * v) < 1e-8 * max(1.0, lam)
    assert np.all(np.diff(p.eigenvalues) <= 0)
    np.testing.assert_allclose(p.components @ p.components.T, np.eye(p.d_out), atol=1e-12)


def test_projected_covariance_is_diagonal(rng):
    x = rng.normal(size=(500, 5)) @ rng.normal(size=(5, 5))
    red = fit_reducer(x)
    z = red(x)
    c = np.cov(z.T)
    np.testing.assert_allclose(c, np.diag(np.diag(c)), atol=1e-9)
    assert red.pca.variance_kept >= 0.95


def test_full_rank_projection_preserves_norms_and_reconstructs(rng):
    x = rng.normal(size=(100, 4))
    std = Standardizer.centering(x)
    p = fit_pca(std.transform(x), variance=1.0)
    z = transform(p, std, x)
    np.testing.assert_allclose(np.linalg.norm(z, axis=1),
                               np.linalg.norm(x - x.mean(0), axis=1), rtol=1e-10)
    np.testing.assert_allclose(z @ p.components + x.mean(0), x, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 8), st.floats(0.5, 0.999), st.integers(0, 10_000))
def test_kept_variance_meets_target_minimally(d, target, seed):
    x = np.random.default_rng(seed).normal(size=(60, d)) * np.arange(1, d + 1)
    p = fit_pca(x, variance=target)
    ev = p.all_eigenvalues
    cum = np.cumsum(ev) / ev.sum()
    assert p.variance_kept >= target - 1e-12
    if p.d_out > 1:
        assert cum[p.d_out - 2] < target
    for row in p.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_standardizer(rng):
    x = rng.normal(3.0, 2.0, size=(50, 3))
    x[:, 2] = 7.0
    s = fit_standardizer(x)
    z = s.transform(x)
    np.testing.assert_allclose(z[:, :2].mean(0), 0.0, atol=1e-12)
    np.testing.assert_allclose(z[:, :2].std(0), 1.0)
    assert np.all(z[:, 2] == 0.0)
    with pytest.raises(ValueError):
        s.transform(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        fit_standardizer(np.zeros((1, 3)))


def test_errors():
    with pytest.raises(ValueError):
        fit_pca(np.ones((5, 2)))
    with pytest.raises(ValueError):
        fit_pca(np.random.default_rng(0).normal(size=(5, 2)), variance=0.0)


def test_reducer_serialization(rng):
    x = rng.normal(size=(40, 5))
    for standardize in (True, False):
        red = fit_reducer(x, 0.9, standardize)
        back = Reducer.loads(red.dumps())
        np.testing.assert_array_equal(back(x), red(x))
        assert back.dumps() == red.dumps()


def test_train_only_fit_ignores_test_rows(rng):
    train = rng.normal(size=(80, 4))
    red = fit_reducer(train)
    test = rng.normal(size=(10, 4)) * 100
    again = fit_reducer(train)
    assert red.dumps() == again.dumps()
    assert red(test).shape == (10, red.pca.d_out)

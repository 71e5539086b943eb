import warnings

import numpy as np
import pytest
from scipy.special import digamma, gammaln
from scipy.stats import wishart

from gbmil import vbgmm
from gbmil.vbgmm import VBGMMModel, VBGMMPrior, default_prior, fit, prune, responsibilities


def blobs(rng, centers, n_each, sigma=1.0):
    return np.vstack([c + sigma * rng.normal(size=(n_each, len(c))) for c in centers])


def three_clusters(seed, n=300, d=5, sep=10.0):
    rng = np.random.default_rng(seed)
    centers = np.zeros((3, d))
    centers[1, 0] = sep
    centers[2, 1] = sep
    return blobs(rng, centers, n // 3), centers


def elbo_oracle(x, r, prior):
    """Variational bound written term by term from the standard conjugate
    Gaussian-Wishart derivation, using scipy's Wishart entropy."""
    n, d = x.shape
    K = r.shape[1]
    a0, b0, m0, W0, nu0 = prior.alpha0, prior.beta0, prior.m0, prior.W0, prior.nu0
    W0inv = np.linalg.inv(W0)
    total = 0.0
    alpha = a0 + r.sum(0)
    e_ln_pi = digamma(alpha) - digamma(alpha.sum())
    ln_c = lambda a: gammaln(a.sum()) - gammaln(a).sum()
    ln_b = lambda W, nu: (-nu / 2 * np.linalg.slogdet(W)[1]
                          - (nu * d / 2 * np.log(2) + d * (d - 1) / 4 * np.log(np.pi)
                             + sum(gammaln((nu + 1 - i) / 2) for i in range(1, d + 1))))
    for k in range(K):
        Nk = r[:, k].sum()
        xbar = (r[:, k] @ x) / Nk
        S = sum(r[i, k] * np.outer(x[i] - xbar, x[i] - xbar) for i in range(n)) / Nk
        beta = b0 + Nk
        m = (b0 * m0 + Nk * xbar) / beta
        nu = nu0 + Nk
        Winv = W0inv + Nk * S + b0 * Nk / (b0 + Nk) * np.outer(xbar - m0, xbar - m0)
        W = np.linalg.inv(Winv)
        ln_lam = (sum(digamma((nu + 1 - i) / 2) for i in range(1, d + 1))
                  + d * np.log(2) + np.linalg.slogdet(W)[1])
        # E ln p(X | Z, mu, Lambda)
        total += 0.5 * Nk * (ln_lam - d / beta - nu * np.trace(S @ W)
                             - nu * (xbar - m) @ W @ (xbar - m) - d * np.log(2 * np.pi))
        # E ln p(Z | pi) - E ln q(Z)
        total += np.sum(r[:, k] * e_ln_pi[k])
        total -= np.sum(r[:, k] * np.log(np.where(r[:, k] > 0, r[:, k], 1.0)))
        # E ln p(mu, Lambda)
        total += 0.5 * (d * np.log(b0 / (2 * np.pi)) + ln_lam - d * b0 / beta
                        - b0 * nu * (m - m0) @ W @ (m - m0))
        total += ln_b(W0, nu0) + 0.5 * (nu0 - d - 1) * ln_lam - 0.5 * nu * np.trace(W0inv @ W)
        # - E ln q(mu, Lambda)
        h = wishart(df=nu, scale=W).entropy()
        total -= 0.5 * ln_lam + d / 2 * np.log(beta / (2 * np.pi)) - d / 2 - h
    # E ln p(pi) - E ln q(pi)
    total += ln_c(np.full(K, a0)) + (a0 - 1) * e_ln_pi.sum()
    total -= np.sum((alpha - 1) * e_ln_pi) + ln_c(alpha)
    return total


def test_bound_matches_independent_oracle(rng):
    x = rng.normal(size=(25, 3)) @ np.diag([1.0, 2.0, 0.5]) + 1.0
    prior = default_prior(x, 4)
    w0_inv = np.linalg.inv(prior.W0)
    for _ in range(3):
        logits = rng.normal(size=(25, 4))
        r = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
        post = vbgmm._m_step(x, r, prior, w0_inv)
        got = vbgmm._bound(r, post.log_rho(x), post, prior, w0_inv,
                           np.linalg.slogdet(prior.W0)[1])
        assert got == pytest.approx(elbo_oracle(x, r, prior), rel=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_single_gaussian_collapses_to_one(seed):
    x = np.random.default_rng(seed).normal(size=(300, 3))
    assert prune(fit(x, k_init=5, seed=seed)).k_star == 1


@pytest.mark.parametrize("seed", range(4))
def test_deletion_moves_only_raise_the_bound(seed):
    x = np.random.default_rng(seed).normal(size=(200, 2))
    plain = fit(x, k_init=5, seed=seed, delete_moves=False)
    moved = fit(x, k_init=5, seed=seed)
    assert plain.n_moves == 0
    assert moved.elbo_trace[-1] >= plain.elbo_trace[-1]
    trace = np.array(plain.elbo_trace)
    assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[1:]))


def test_three_clusters_recovered():
    x, centers = three_clusters(0)
    m = prune(fit(x, k_init=10, seed=0), 0.01)
    assert m.k_star == 3
    found = m.m[m.surviving]
    for c in centers:
        assert np.min(np.linalg.norm(found - c, axis=1)) < 0.5


@pytest.mark.parametrize("seed", range(4))
def test_elbo_non_decreasing(seed):
    x, _ = three_clusters(seed)
    trace = np.array(fit(x, k_init=10, seed=seed).elbo_trace)
    assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[1:]))


def test_mass_conservation():
    x, _ = three_clusters(1)
    m = fit(x, k_init=6, seed=1)
    assert np.sum(m.alpha - m.prior.alpha0) == pytest.approx(len(x), rel=1e-9)
    assert np.sum(m.nu - m.prior.nu0) == pytest.approx(len(x), rel=1e-9)


def test_permutation_equivariance():
    x, _ = three_clusters(2, n=150)
    perm = np.random.default_rng(9).permutation(len(x))
    a = fit(x, k_init=5, seed=3)
    b = fit(x[perm], k_init=5, seed=3)
    np.testing.assert_allclose(a.alpha, b.alpha)
    np.testing.assert_allclose(a.m, b.m)
    np.testing.assert_allclose(responsibilities(a, x)[perm], responsibilities(b, x[perm]))


def _model_with_weights(w):
    k = len(w)
    prior = VBGMMPrior(0.001, 1.0, np.zeros(2), np.eye(2), 4.0)
    return VBGMMModel(prior, np.asarray(w, float) * 100, np.ones(k), np.zeros((k, 2)),
                      np.tile(np.eye(2), (k, 1, 1)), np.full(k, 5.0))


def test_prune_examples():
    assert prune(_model_with_weights([0.5, 0.495, 0.005]), 0.01).k_star == 2
    m = prune(_model_with_weights([0.004, 0.003, 0.993]), 0.01)
    assert m.k_star == 1 and list(m.surviving) == [2]
    assert prune(_model_with_weights([0.3, 0.3, 0.4]), 0.9).k_star == 1


def test_responsibilities_sum_to_one():
    x, _ = three_clusters(3)
    m = prune(fit(x, k_init=10, seed=0))
    g = responsibilities(m, x)
    assert g.shape == (len(x), m.k_star)
    np.testing.assert_allclose(g.sum(1), 1.0, atol=1e-12)
    assert (g >= 0).all()
    assert responsibilities(m, x[0]).shape == (m.k_star,)
    with pytest.raises(ValueError):
        responsibilities(m, np.zeros((2, 4)))


def test_prior_validation():
    with pytest.raises(ValueError, match="positive definite"):
        VBGMMPrior(1.0, 1.0, np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), 4.0).validate(2)
    with pytest.raises(ValueError):
        VBGMMPrior(1.0, 1.0, np.zeros(2), np.eye(2), 0.5).validate(2)
    with pytest.raises(ValueError):
        VBGMMPrior(-1.0, 1.0, np.zeros(2), np.eye(2), 4.0).validate(2)
    with pytest.raises(ValueError):
        fit(np.zeros((3, 2)), k_init=5)


def test_degenerate_data_stays_finite():
    x = np.zeros((30, 2))
    x[:15, 0] = 1.0  # zero variance along the second axis
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", vbgmm.NumericalWarning)
        m = fit(x, k_init=3, seed=0)
    assert np.isfinite(m.elbo_trace).all()


def test_serialization_round_trip():
    x, _ = three_clusters(4, n=90)
    m = prune(fit(x, k_init=4, seed=0))
    data = m.dumps()
    back = VBGMMModel.loads(data)
    assert back.dumps() == data
    np.testing.assert_array_equal(responsibilities(back, x), responsibilities(m, x))

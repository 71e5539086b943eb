"""Variational Bayesian Gaussian mixture with post-hoc weight pruning.

Conjugate Dirichlet / Gauss-Wishart model with full covariances, fitted by
coordinate ascent on the evidence lower bound. Responsibilities of new points
are computed under the variational posterior and renormalized over the
components that survive pruning.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import cho_factor, solve_triangular
from scipy.special import digamma, gammaln, logsumexp

from . import serialize

log = logging.getLogger(__name__)

JITTER = 1e-8


class NumericalWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class VBGMMPrior:
    alpha0: float
    beta0: float
    m0: np.ndarray
    W0: np.ndarray
    nu0: float

    def validate(self, dim):
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise ValueError("alpha0 and beta0 must be positive")
        if self.m0.shape != (dim,) or self.W0.shape != (dim, dim):
            raise ValueError("prior dimensions do not match the data")
        if self.nu0 <= dim - 1:
            raise ValueError(f"nu0 must exceed {dim - 1}")
        if not np.allclose(self.W0, self.W0.T):
            raise ValueError("W0 must be symmetric")
        try:
            np.linalg.cholesky(self.W0)
        except np.linalg.LinAlgError:
            raise ValueError("W0 must be positive definite") from None


def default_prior(x, k_init):
    """Weakly informative prior scaled to the data.

    alpha0 = 1/K, beta0 = 1, m0 = data mean, nu0 = d + 2 and
    W0 = diag(var)^-1 / nu0 so that the prior mean precision is the inverse
    per-dimension variance.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[1]
    var = np.maximum(x.var(axis=0, ddof=1) if x.shape[0] > 1 else np.ones(d), 1e-12)
    nu0 = d + 2.0
    return VBGMMPrior(1.0 / k_init, 1.0, x.mean(axis=0), np.diag(1.0 / var) / nu0, nu0)


@dataclass(frozen=True)
class VBGMMModel:
    prior: VBGMMPrior
    alpha: np.ndarray   # (K,)
    beta: np.ndarray    # (K,)
    m: np.ndarray       # (K, d)
    W: np.ndarray       # (K, d, d)
    nu: np.ndarray      # (K,)
    surviving: np.ndarray = field(default=None)
    elbo_trace: tuple = ()
    n_iter: int = 0
    converged: bool = False
    n_moves: int = 0

    def __post_init__(self):
        if self.surviving is None:
            object.__setattr__(self, "surviving", np.arange(len(self.alpha)))

    @property
    def k_init(self):
        return len(self.alpha)

    @property
    def k_star(self):
        return len(self.surviving)

    @property
    def dim(self):
        return self.m.shape[1]

    def expected_weights(self):
        """E[pi_k] = alpha_k / sum(alpha) over all components."""
        return self.alpha / self.alpha.sum()

    def dumps(self):
        p = self.prior
        return serialize.dumps("vbgmm", {
            "alpha": self.alpha, "beta": self.beta, "m": self.m, "W": self.W,
            "nu": self.nu, "surviving": self.surviving, "elbo_trace": np.array(self.elbo_trace),
            "prior_m0": p.m0, "prior_W0": p.W0,
        }, {"alpha0": p.alpha0, "beta0": p.beta0, "nu0": p.nu0,
            "n_iter": self.n_iter, "converged": self.converged, "n_moves": self.n_moves})

    @classmethod
    def loads(cls, data):
        a, meta = serialize.loads(data, "vbgmm")
        prior = VBGMMPrior(meta["alpha0"], meta["beta0"], a["prior_m0"], a["prior_W0"], meta["nu0"])
        return cls(prior, a["alpha"], a["beta"], a["m"], a["W"], a["nu"], a["surviving"],
                   tuple(a["elbo_trace"].tolist()), meta["n_iter"], meta["converged"],
                   meta.get("n_moves", 0))


def _chol_inv_scale(winv):
    """Lower Cholesky factor of W^-1, adding jitter when it is not PD."""
    try:
        return np.linalg.cholesky(winv)
    except np.linalg.LinAlgError:
        warnings.warn("singular Wishart scale update; adding jitter", NumericalWarning)
        return np.linalg.cholesky(winv + JITTER * np.eye(winv.shape[0]))


class _Posterior:
    """Variational parameters plus cached Cholesky factors of W_k^-1."""

    def __init__(self, alpha, beta, m, chol_winv, nu):
        self.alpha, self.beta, self.m, self.chol, self.nu = alpha, beta, m, chol_winv, nu
        d = m.shape[1]
        self.logdet_W = -2.0 * np.log(np.diagonal(chol_winv, axis1=1, axis2=2)).sum(axis=1)
        self.e_log_pi = digamma(alpha) - digamma(alpha.sum())
        i = np.arange(1, d + 1)
        self.e_log_det = (digamma((nu[:, None] + 1 - i[None, :]) / 2).sum(axis=1)
                          + d * np.log(2.0) + self.logdet_W)

    def W(self):
        eye = np.eye(self.m.shape[1])
        out = []
        for c in self.chol:
            li = solve_triangular(c, eye, lower=True)
            out.append(li.T @ li)
        return np.array(out)

    def quad(self, x, k):
        """nu_k (x - m_k)^T W_k (x - m_k) for every row of ``x``."""
        y = solve_triangular(self.chol[k], (x - self.m[k]).T, lower=True)
        return self.nu[k] * np.sum(y * y, axis=0)

    def log_rho(self, x, comps=None):
        comps = range(len(self.alpha)) if comps is None else comps
        d = x.shape[1]
        cols = []
        for k in comps:
            e_quad = d / self.beta[k] + self.quad(x, k)
            cols.append(self.e_log_pi[k] + 0.5 * self.e_log_det[k]
                        - 0.5 * d * np.log(2 * np.pi) - 0.5 * e_quad)
        return np.column_stack(cols)


def _log_wishart_norm(logdet_W, nu, d):
    """ln B(W, nu) for the Wishart normalizer."""
    i = np.arange(1, d + 1)
    return (-0.5 * nu * logdet_W
            - (0.5 * nu * d * np.log(2.0) + 0.25 * d * (d - 1) * np.log(np.pi)
               + gammaln((np.asarray(nu)[..., None] + 1 - i) / 2).sum(axis=-1)))


def _m_step(x, r, prior, w0_inv):
    nk = r.sum(axis=0)
    d = x.shape[1]
    sx = r.T @ x
    xbar = sx / np.maximum(nk, 1e-300)[:, None]
    alpha = prior.alpha0 + nk
    beta = prior.beta0 + nk
    m = (prior.beta0 * prior.m0[None, :] + sx) / beta[:, None]
    nu = prior.nu0 + nk
    chol = np.empty((len(nk), d, d))
    for k in range(len(nk)):
        xc = x - xbar[k]
        scatter = (r[:, k, None] * xc).T @ xc
        dm = xbar[k] - prior.m0
        winv = w0_inv + scatter + (prior.beta0 * nk[k] / (prior.beta0 + nk[k])) * np.outer(dm, dm)
        chol[k] = _chol_inv_scale(0.5 * (winv + winv.T))
    return _Posterior(alpha, beta, m, chol, nu)


def _bound(r, log_rho, post, prior, w0_inv, logdet_W0):
    """Evidence lower bound for responsibilities ``r`` and posterior ``post``."""
    d = post.m.shape[1]
    kk = len(post.alpha)
    # E[ln p(X|Z,mu,Lambda)] + E[ln p(Z|pi)] - E[ln q(Z)]
    with np.errstate(divide="ignore", invalid="ignore"):
        rlogr = np.where(r > 0, r * np.log(r), 0.0)
    data_term = np.sum(r * log_rho) - rlogr.sum()
    # E[ln p(pi)] - E[ln q(pi)]
    log_c0 = gammaln(kk * prior.alpha0) - kk * gammaln(prior.alpha0)
    log_c = gammaln(post.alpha.sum()) - gammaln(post.alpha).sum()
    pi_term = (log_c0 + (prior.alpha0 - 1) * post.e_log_pi.sum()
               - (np.sum((post.alpha - 1) * post.e_log_pi) + log_c))
    # E[ln p(mu,Lambda)]
    W = post.W()
    dm = post.m - prior.m0
    quad0 = np.einsum("ki,kij,kj->k", dm, W, dm)
    trace0 = np.einsum("ij,kji->k", w0_inv, W)
    log_b0 = _log_wishart_norm(logdet_W0, prior.nu0, d)
    p_ml = (0.5 * np.sum(d * np.log(prior.beta0 / (2 * np.pi)) + post.e_log_det
                         - d * prior.beta0 / post.beta - prior.beta0 * post.nu * quad0)
            + kk * log_b0 + 0.5 * (prior.nu0 - d - 1) * post.e_log_det.sum()
            - 0.5 * np.sum(post.nu * trace0))
    # E[ln q(mu,Lambda)]
    log_b = _log_wishart_norm(post.logdet_W, post.nu, d)
    h_lambda = -log_b - 0.5 * (post.nu - d - 1) * post.e_log_det + 0.5 * post.nu * d
    q_ml = np.sum(0.5 * post.e_log_det + 0.5 * d * np.log(post.beta / (2 * np.pi))
                  - 0.5 * d - h_lambda)
    return float(data_term + pi_term + p_ml - q_ml)


def _canonical_order(x):
    return np.lexsort(x.T[::-1])


def _cavi(x, r, prior, w0_inv, logdet_W0, tol, max_iter):
    """Coordinate ascent from responsibilities ``r``; returns (post, r, trace, converged)."""
    trace = []
    post = None
    for _ in range(max_iter):
        post = _m_step(x, r, prior, w0_inv)
        log_rho = post.log_rho(x)
        trace.append(_bound(r, log_rho, post, prior, w0_inv, logdet_W0))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * abs(trace[-1]):
            return post, r, trace, True
        r = np.exp(log_rho - logsumexp(log_rho, axis=1, keepdims=True))
    return post, r, trace, False


def fit(x, k_init=50, prior=None, tol=1e-5, max_iter=200, seed=0, delete_moves=True,
        threshold=0.01):
    """Fit the variational posterior.

    Responsibilities start from a seeded k-means assignment (one-hot). Rows
    are put in a canonical order first, so the fit does not depend on the
    order of the input. Iteration stops when the relative ELBO change drops
    below ``tol`` or after ``max_iter`` updates.

    With ``delete_moves`` the converged fit is then challenged: each
    component whose expected weight reaches ``threshold`` (smallest first)
    is emptied, its mass is handed to the remaining components and coordinate
    ascent restarts. The proposal replaces the current fit only if its final
    ELBO is higher. This lets a fit stuck with one cluster split into
    several pieces reach the merged solution.
    ``elbo_trace`` is the trace of the accepted ascent run and
    ``n_moves`` counts accepted deletions.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("x must be a 2-D matrix")
    n, d = x.shape
    if k_init < 1 or n < k_init:
        raise ValueError(f"need 1 <= k_init <= rows, got k_init={k_init}, rows={n}")
    prior = prior if prior is not None else default_prior(x, k_init)
    prior.validate(d)
    x = x[_canonical_order(x)]

    w0_inv = np.linalg.inv(prior.W0)
    w0_inv = 0.5 * (w0_inv + w0_inv.T)
    logdet_W0 = np.linalg.slogdet(prior.W0)[1]

    r = np.zeros((n, k_init))
    if k_init == 1:
        r[:, 0] = 1.0
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, labels = kmeans2(x, k_init, minit="++", seed=np.random.default_rng(seed))
        r[np.arange(n), labels] = 1.0

    post, r, trace, converged = _cavi(x, r, prior, w0_inv, logdet_W0, tol, max_iter)
    moves = 0
    while delete_moves:
        weights = post.alpha / post.alpha.sum()
        live = [k for k in np.argsort(weights, kind="stable") if weights[k] >= threshold]
        if len(live) < 2:
            break
        for k in live:
            lr = post.log_rho(x)
            lr[:, k] = -np.inf
            cand = _cavi(x, np.exp(lr - logsumexp(lr, axis=1, keepdims=True)), prior,
                         w0_inv, logdet_W0, tol, max_iter)
            if cand[2][-1] > trace[-1] + tol * abs(trace[-1]):
                post, r, trace, converged = cand
                moves += 1
                break
        else:
            break
    log.debug("vbgmm: %d iterations, %d deletions, elbo %.6g", len(trace), moves, trace[-1])
    return VBGMMModel(prior, post.alpha, post.beta, post.m, post.W(), post.nu,
                      None, tuple(trace), len(trace), converged, moves)


def prune(model, threshold=0.01):
    """Keep components whose expected weight reaches ``threshold``.

    The component with the largest weight always survives.
    """
    w = model.expected_weights()
    keep = np.flatnonzero(w >= threshold)
    if keep.size == 0:
        keep = np.array([int(np.argmax(w))])
    return replace(model, surviving=keep)


def _posterior_of(model):
    chol = np.array([_chol_inv_scale(np.linalg.inv(w)) for w in model.W])
    return _Posterior(model.alpha, model.beta, model.m, chol, model.nu)


class ResponsibilityMap:
    """Cached evaluator of responsibilities over the surviving components."""

    def __init__(self, model):
        self.model = model
        self._post = _posterior_of(model)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.model.dim:
            raise ValueError(f"expected {self.model.dim} features, got {x.shape[1]}")
        lr = self._post.log_rho(x, self.model.surviving)
        g = np.exp(lr - logsumexp(lr, axis=1, keepdims=True))
        return g[0] if single else g


def responsibilities(model, x):
    """Responsibilities of ``x`` (vector or matrix) over surviving components."""
    return ResponsibilityMap(model)(x)

"""Hierarchical spatio-temporal Poisson model and its MCMC sampler.

Counts over I areas x J days follow

    O_ij ~ Poisson(lambda_ij)
    log(lambda_ij) = log(P_i) + gamma_DoW(j) + ((mu + beta*) X)_ij + eps_ij

where gamma is a weekly reporting cycle (gamma_1 = 0 fixed), X the natural
cubic B-spline design matrix, the columns of beta* are Leroux CAR fields
(one spread sigma_k per basis function, a common or per-basis mixing rho)
and eps is unstructured overdispersion with spread sigma_eps. gamma and mu
get improper flat priors, the sigmas Uniform(0, c), rho Uniform on
[0, 1 - 1e-6].

Inference is multi-chain adaptive Metropolis-within-Gibbs. Every scalar
site uses a random-walk proposal tuned towards 0.44 acceptance during
burn-in and frozen afterwards, so the retained chain is a valid Markov
chain. Conditionally independent sites are proposed simultaneously: all
eps cells at once, and the areas of one graph colour within a spline
column at once. That leaves each single-site conditional untouched but
turns the sweep into a handful of vectorized array operations; a cached
linear predictor (and its exp) is adjusted incrementally so the Poisson
terms never need a full recompute inside the loop.
"""

import math
import sys
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, logit
from sklearn.base import BaseEstimator

from .spatial import RHO_MAX, LerouxField, log_density
from .splines import build_basis

__all__ = [
    "ModelState",
    "PosteriorDraws",
    "SpatioTemporalPoissonModel",
    "dow",
    "log_intensity",
    "log_posterior",
    "fit",
    "diagnostics",
    "fitted_curves",
]

_LOG_2PI = np.log(2.0 * np.pi)
_ADAPT_TARGET = 0.44


def dow(j):
    """Day-of-week index in 1..7 for 1-based study day j; dow(1) == 1."""
    if j < 1:
        raise ValueError("study days are counted from 1")
    return (j - 1) % 7 + 1


@dataclass
class ModelState:
    """All latent quantities at one MCMC iteration.

    ``gamma`` has length 7 with ``gamma[0]`` fixed at 0; ``rho`` holds one
    entry in common mode and K entries in per-basis mode; ``eps`` may be
    None when overdispersion was disabled or not stored.
    """

    gamma: np.ndarray
    mu: np.ndarray
    beta_star: np.ndarray
    eps: np.ndarray
    rho: np.ndarray
    sigma_beta: np.ndarray
    sigma_eps: float

    def validate(self, sd_upper):
        if self.gamma.shape != (7,) or self.gamma[0] != 0.0:
            raise ValueError("gamma must have length 7 with gamma[0] == 0")
        if not np.all((self.sigma_beta > 0) & (self.sigma_beta <= sd_upper)):
            raise ValueError("sigma_beta outside (0, c]")
        if not 0 < self.sigma_eps <= sd_upper:
            raise ValueError("sigma_eps outside (0, c]")
        if not np.all((self.rho >= 0) & (self.rho <= RHO_MAX)):
            raise ValueError("rho outside [0, 1 - 1e-6]")


def log_intensity(state, dataset, basis, i, j, include_dow=True,
                  include_eps=True):
    """log(lambda) for 0-based area i and day j (study day j + 1)."""
    if not (0 <= i < dataset.I and 0 <= j < dataset.J):
        raise IndexError(f"cell ({i}, {j}) outside {dataset.I} x {dataset.J}")
    value = math.log(dataset.populations[i])
    value += float((state.mu + state.beta_star[i]) @ basis.X[:, j])
    if include_dow:
        value += float(state.gamma[dow(j + 1) - 1])
    if include_eps:
        value += float(state.eps[i, j])
    return value


def _linear_predictor(state, dataset, basis, include_dow, include_eps):
    eta = np.log(dataset.populations)[:, None] + (
        state.mu[None, :] + state.beta_star
    ) @ basis.X
    if include_dow:
        eta = eta + state.gamma[np.arange(dataset.J) % 7][None, :]
    if include_eps and state.eps is not None:
        eta = eta + state.eps
    return eta


def log_posterior(state, dataset, basis, graph, *, uniform_sd_upper=10.0,
                  include_dow=True, include_eps=True, likelihood_off=False,
                  disable_spatial=False, mu_prior_sd=None,
                  gamma_prior_sd=None):
    """Joint log-density of data and latents; -inf outside the support.

    ``graph`` may be an AdjacencyGraph or a prebuilt LerouxField (cheaper
    when evaluating repeatedly).
    """
    c = uniform_sd_upper
    if np.any(state.rho < 0) or np.any(state.rho > RHO_MAX):
        return -np.inf
    if include_eps and not 0 < state.sigma_eps <= c:
        return -np.inf
    if not disable_spatial and not np.all(
        (state.sigma_beta > 0) & (state.sigma_beta <= c)
    ):
        return -np.inf

    total = 0.0
    if not likelihood_off:
        eta = _linear_predictor(state, dataset, basis, include_dow,
                                include_eps)
        O = dataset.counts
        total += float(np.sum(O * eta - np.exp(eta)) - gammaln(O + 1).sum())
        if not np.isfinite(total):
            return -np.inf

    if not disable_spatial:
        field = graph if isinstance(graph, LerouxField) else \
            LerouxField.from_graph(graph)
        for k in range(basis.K):
            rho_k = float(state.rho[k if state.rho.shape[0] > 1 else 0])
            total += log_density(field, state.beta_star[:, k],
                                 min(rho_k, RHO_MAX),
                                 float(state.sigma_beta[k]) ** 2)
    if include_eps:
        n_cells = state.eps.size
        total += float(
            -0.5 * np.sum(state.eps ** 2) / state.sigma_eps ** 2
            - n_cells * math.log(state.sigma_eps) - 0.5 * n_cells * _LOG_2PI
        )
    if mu_prior_sd is not None:
        total += float(
            -0.5 * np.sum(state.mu ** 2) / mu_prior_sd ** 2
            - state.mu.size * (math.log(mu_prior_sd) + 0.5 * _LOG_2PI)
        )
    if gamma_prior_sd is not None and include_dow:
        g = state.gamma[1:]
        total += float(
            -0.5 * np.sum(g ** 2) / gamma_prior_sd ** 2
            - g.size * (math.log(gamma_prior_sd) + 0.5 * _LOG_2PI)
        )
    return total


# ---------------------------------------------------------------------------
# retained draws
# ---------------------------------------------------------------------------

@dataclass
class PosteriorDraws:
    """Thinned post-burn-in snapshots from all chains.

    Array layouts: gamma (C, N, 7), mu (C, N, K), beta_star (C, N, I, K),
    eps (C, N, I, J) or None, rho (C, N) in common mode or (C, N, K) in
    per-basis mode, sigma_beta (C, N, K), sigma_eps (C, N).
    """

    gamma: np.ndarray
    mu: np.ndarray
    beta_star: np.ndarray
    eps: np.ndarray
    rho: np.ndarray
    sigma_beta: np.ndarray
    sigma_eps: np.ndarray
    iterations: np.ndarray
    burn_in: int
    thin: int

    @property
    def n_chains(self):
        return self.mu.shape[0]

    @property
    def n_kept(self):
        return self.mu.shape[1]

    @property
    def n_total(self):
        return self.n_chains * self.n_kept

    @property
    def K(self):
        return self.mu.shape[2]

    @property
    def I(self):
        return self.beta_star.shape[2]

    def scalar_series(self):
        """Ordered name -> (chains, kept) map of every scalar parameter."""
        out = {}
        for d in range(2, 8):
            out[f"gamma_{d}"] = self.gamma[:, :, d - 1]
        for k in range(self.K):
            out[f"mu_{k + 1}"] = self.mu[:, :, k]
        for k in range(self.K):
            out[f"sigma_beta_{k + 1}"] = self.sigma_beta[:, :, k]
        out["sigma_eps"] = self.sigma_eps
        if self.rho.ndim == 3:
            for k in range(self.K):
                out[f"rho_{k + 1}"] = self.rho[:, :, k]
        else:
            out["rho"] = self.rho
        return out

    def state_at(self, chain, index):
        rho = self.rho[chain, index]
        return ModelState(
            gamma=self.gamma[chain, index].copy(),
            mu=self.mu[chain, index].copy(),
            beta_star=self.beta_star[chain, index].copy(),
            eps=None if self.eps is None else self.eps[chain, index].copy(),
            rho=np.atleast_1d(np.array(rho, dtype=float)),
            sigma_beta=self.sigma_beta[chain, index].copy(),
            sigma_eps=float(self.sigma_eps[chain, index]),
        )


# ---------------------------------------------------------------------------
# sampler internals
# ---------------------------------------------------------------------------

class _FitContext:
    """Immutable precomputations shared by all chains."""

    def __init__(self, dataset, basis, graph):
        self.I, self.J, self.K = dataset.I, dataset.J, basis.K
        self.O = dataset.counts.astype(float)
        self.log_pop = np.log(dataset.populations)
        self.X = basis.X
        self.field = LerouxField.from_graph(graph)
        self.n = graph.n.astype(float)
        self.W = graph.adjacency_matrix().tocsr()

        # compact support of each basis function, as a column slice
        self.support = []
        self.X_sup = []
        self.O_sup = []
        for k in range(self.K):
            nz = np.flatnonzero(self.X[k])
            lo, hi = int(nz[0]), int(nz[-1]) + 1
            self.support.append((lo, hi))
            self.X_sup.append(self.X[k, lo:hi].copy())
            self.O_sup.append(np.ascontiguousarray(self.O[:, lo:hi]))
        self.colsum_O = self.O.sum(axis=0)

        dow0 = np.arange(self.J) % 7
        self.dow_cols = [np.flatnonzero(dow0 == d) for d in range(7)]
        self.sum_O_dow = [self.O[:, cols].sum() for cols in self.dow_cols]

        self.colors = _greedy_coloring(graph)
        self.W_color = [self.W[cls] for cls in self.colors]


def _greedy_coloring(graph):
    """Colour classes of mutually non-adjacent areas (deterministic)."""
    order = sorted(range(graph.I), key=lambda i: (-graph.n[i], i))
    color = np.full(graph.I, -1, dtype=np.int64)
    for i in order:
        used = {color[j] for j in graph.neighbors[i] if color[j] >= 0}
        c = 0
        while c in used:
            c += 1
        color[i] = c
    return [np.flatnonzero(color == c) for c in range(color.max() + 1)]


@dataclass
class _Options:
    iterations: int
    burn_in: int
    thin: int
    rho_mode: str
    sd_upper: float
    include_dow: bool
    include_eps: bool
    store_eps: bool
    likelihood_off: bool
    disable_spatial: bool
    fix_rho: float
    mu_prior_sd: float
    gamma_prior_sd: float
    progress: bool


class _Chain:
    """One MCMC chain: live state, caches, step sizes, storage."""

    def __init__(self, ctx, opts, seed_seq, chain_idx):
        self.ctx = ctx
        self.opts = opts
        self.idx = chain_idx
        self.rng = np.random.Generator(np.random.PCG64(seed_seq))
        I, J, K = ctx.I, ctx.J, ctx.K

        rng = self.rng
        self.gamma = np.zeros(7)
        if opts.include_dow:
            self.gamma[1:] = 0.1 * rng.standard_normal(6)
        self.mu = 0.1 * rng.standard_normal(K)
        self.beta_star = np.zeros((I, K))
        if not opts.disable_spatial:
            self.beta_star = 0.1 * rng.standard_normal((I, K))
        self.eps = np.zeros((I, J))
        if opts.include_eps:
            self.eps = 0.1 * rng.standard_normal((I, J))
        self.sigma_beta = np.full(K, 0.5)
        self.sigma_eps = 0.5
        n_rho = K if opts.rho_mode == "per_basis" else 1
        if opts.fix_rho is not None:
            self.rho = np.full(n_rho, float(opts.fix_rho))
        else:
            self.rho = np.full(n_rho, 0.5)

        # proposal scales, tuned per site during burn-in
        self.s_gamma = np.full(6, 0.1)
        self.s_mu = np.full(K, 0.1)
        self.s_beta = np.full((I, K), 0.1)
        self.s_eps = np.full((I, J), 0.5)
        self.s_sigma = np.full(K, 0.5)
        self.s_sigma_eps = 0.5
        self.s_rho = np.full(n_rho, 0.5)
        self.s_shift = np.full(K, 0.2)
        self.s_mu_eps = np.full(K, 0.2)
        self.s_beta_eps = np.full((I, K), 0.2)
        self.s_gamma_eps = np.full(6, 0.2)

        self._refresh_caches()
        self.acc = {"gamma": [0.0, 0], "mu": [0.0, 0], "beta": [0.0, 0],
                    "shift": [0.0, 0], "eps": [0.0, 0], "sigma": [0.0, 0],
                    "rho": [0.0, 0]}

    # -- caches ------------------------------------------------------------

    def _refresh_caches(self):
        if self.opts.likelihood_off:
            self.eta = None
            self.lam = None
        else:
            self.eta = self._eta_from_state()
            self.lam = np.exp(self.eta)
        self.ss_eps = float(np.sum(self.eps * self.eps))

    def _eta_from_state(self):
        ctx, opts = self.ctx, self.opts
        eta = ctx.log_pop[:, None] + (
            self.mu[None, :] + self.beta_star
        ) @ ctx.X
        if opts.include_dow:
            eta = eta + self.gamma[np.arange(ctx.J) % 7][None, :]
        if opts.include_eps:
            eta = eta + self.eps
        return eta

    def state(self):
        return ModelState(
            gamma=self.gamma.copy(), mu=self.mu.copy(),
            beta_star=self.beta_star.copy(),
            eps=self.eps.copy() if self.opts.include_eps else None,
            rho=self.rho.copy(), sigma_beta=self.sigma_beta.copy(),
            sigma_eps=self.sigma_eps,
        )

    # -- bookkeeping ---------------------------------------------------------

    def _tally(self, block, p):
        slot = self.acc[block]
        slot[0] += float(np.mean(p))
        slot[1] += 1

    def _rho_for(self, k):
        return float(self.rho[k if self.rho.shape[0] > 1 else 0])

    # -- single update blocks ------------------------------------------------

    def _update_gamma(self, rate):
        ctx, opts, rng = self.ctx, self.opts, self.rng
        for d in range(1, 7):
            delta = self.s_gamma[d - 1] * rng.standard_normal()
            logu = math.log(rng.random())
            logr = 0.0
            if not opts.likelihood_off:
                cols = ctx.dow_cols[d]
                sum_lam = float(self.lam[:, cols].sum())
                logr += delta * ctx.sum_O_dow[d] - sum_lam * math.expm1(delta)
            if opts.gamma_prior_sd is not None:
                g = self.gamma[d]
                logr += (g * g - (g + delta) ** 2) / (
                    2 * opts.gamma_prior_sd ** 2
                )
            if not np.isfinite(logr):
                logr = -np.inf
            p = math.exp(min(0.0, logr))
            if logu < logr:
                self.gamma[d] += delta
                if not opts.likelihood_off:
                    self.eta[:, cols] += delta
                    self.lam[:, cols] *= math.exp(delta)
            if rate:
                self.s_gamma[d - 1] *= math.exp(rate * (p - _ADAPT_TARGET))
            self._tally("gamma", p)

    def _update_mu(self, rate):
        ctx, opts, rng = self.ctx, self.opts, self.rng
        for k in range(ctx.K):
            delta = self.s_mu[k] * rng.standard_normal()
            logu = math.log(rng.random())
            logr = 0.0
            if not opts.likelihood_off:
                lo, hi = ctx.support[k]
                xk = ctx.X_sup[k]
                col_lam = self.lam[:, lo:hi].sum(axis=0)
                with np.errstate(over="ignore"):
                    grow = np.expm1(delta * xk)
                logr += delta * float(xk @ ctx.colsum_O[lo:hi]) - float(
                    grow @ col_lam
                )
            if opts.mu_prior_sd is not None:
                m = self.mu[k]
                logr += (m * m - (m + delta) ** 2) / (
                    2 * opts.mu_prior_sd ** 2
                )
            if not np.isfinite(logr):
                logr = -np.inf
            p = math.exp(min(0.0, logr))
            if logu < logr:
                self.mu[k] += delta
                if not opts.likelihood_off:
                    self.eta[:, lo:hi] += delta * xk[None, :]
                    self.lam[:, lo:hi] *= (1.0 + grow)[None, :]
            if rate:
                self.s_mu[k] *= math.exp(rate * (p - _ADAPT_TARGET))
            self._tally("mu", p)

    def _update_beta_star(self, rate):
        ctx, opts, rng = self.ctx, self.opts, self.rng
        for k in range(ctx.K):
            rho = self._rho_for(k)
            sig2 = self.sigma_beta[k] ** 2
            d_vec = 1.0 - rho + rho * ctx.n
            lo, hi = ctx.support[k]
            xk = ctx.X_sup[k]
            for cls, w_cls in zip(ctx.colors, ctx.W_color):
                nbr = w_cls @ self.beta_star[:, k]
                cond_mean = rho * nbr / d_vec[cls]
                cond_var = sig2 / d_vec[cls]
                old = self.beta_star[cls, k]
                delta = self.s_beta[cls, k] * rng.standard_normal(cls.size)
                logu = np.log(rng.random(cls.size))
                new = old + delta
                logr = ((old - cond_mean) ** 2 - (new - cond_mean) ** 2) / (
                    2 * cond_var
                )
                if not opts.likelihood_off:
                    dmat = delta[:, None] * xk[None, :]
                    with np.errstate(over="ignore"):
                        grow = np.expm1(dmat)
                    logr = logr + (ctx.O_sup[k][cls] * dmat).sum(axis=1) - (
                        self.lam[cls, lo:hi] * grow
                    ).sum(axis=1)
                logr = np.where(np.isnan(logr), -np.inf, logr)
                p = np.exp(np.minimum(0.0, logr))
                accept = logu < logr
                if np.any(accept):
                    moved = cls[accept]
                    self.beta_star[moved, k] = new[accept]
                    if not opts.likelihood_off:
                        self.eta[moved, lo:hi] += dmat[accept]
                        self.lam[moved, lo:hi] *= 1.0 + grow[accept]
                if rate:
                    self.s_beta[cls, k] *= np.exp(rate * (p - _ADAPT_TARGET))
                self._tally("beta", p)

    def _update_shift(self, rate):
        """Joint translation mu_k += d, beta*_:k -= d along the level ridge.

        The likelihood is invariant (the linear predictor keeps
        (mu_k + beta*_ik) fixed), so single-site moves no longer have to
        crawl along the flat mu/field-mean direction; only the Leroux
        prior of the column (and an explicit mu prior, when set) enters
        the ratio.
        """
        ctx, opts, rng = self.ctx, self.opts, self.rng
        for k in range(ctx.K):
            delta = self.s_shift[k] * rng.standard_normal()
            logu = math.log(rng.random())
            col = self.beta_star[:, k]
            rho = self._rho_for(k)
            col_sum = float(col.sum())
            # (v - d)'(v - d) - v'v; the structure quad is shift-invariant
            quad_change = -2.0 * delta * col_sum + ctx.I * delta * delta
            logr = -0.5 * (1.0 - rho) * quad_change / self.sigma_beta[k] ** 2
            if opts.mu_prior_sd is not None:
                m = self.mu[k]
                logr += (m * m - (m + delta) ** 2) / (
                    2 * opts.mu_prior_sd ** 2
                )
            p = math.exp(min(0.0, logr))
            if logu < logr:
                self.mu[k] += delta
                self.beta_star[:, k] -= delta
            if rate:
                self.s_shift[k] *= math.exp(rate * (p - _ADAPT_TARGET))
            self._tally("shift", p)

    def _update_trend_eps_swaps(self, rate):
        """Translations trading trend terms against the eps field.

        Each move keeps the linear predictor fixed (likelihood-invariant),
        so only the priors enter: the eps cells swap their content with
        gamma_d, mu_k or beta*_ik. Without these, a chain whose eps has
        absorbed the trend early on (sigma_eps drifting high while the
        spline sits flat) stays trapped there at high counts.
        """
        ctx, opts, rng = self.ctx, self.opts, self.rng
        inv2s2 = 1.0 / (2.0 * self.sigma_eps ** 2)

        if opts.include_dow:
            for d in range(1, 7):
                delta = self.s_gamma_eps[d - 1] * rng.standard_normal()
                logu = math.log(rng.random())
                cols = ctx.dow_cols[d]
                block = self.eps[:, cols]
                # sum of old^2 - new^2 with new = old - delta
                ss_change = -2.0 * delta * float(block.sum()) \
                    + block.size * delta * delta
                logr = -ss_change * inv2s2
                if opts.gamma_prior_sd is not None:
                    g = self.gamma[d]
                    logr += (g * g - (g + delta) ** 2) / (
                        2 * opts.gamma_prior_sd ** 2
                    )
                p = math.exp(min(0.0, logr))
                if logu < logr:
                    self.gamma[d] += delta
                    self.eps[:, cols] -= delta
                    self.ss_eps += ss_change
                if rate:
                    self.s_gamma_eps[d - 1] *= math.exp(
                        rate * (p - _ADAPT_TARGET)
                    )
                self._tally("shift", p)

        for k in range(ctx.K):
            lo, hi = ctx.support[k]
            xk = ctx.X_sup[k]
            xk_sq = float(xk @ xk)
            delta = self.s_mu_eps[k] * rng.standard_normal()
            logu = math.log(rng.random())
            block = self.eps[:, lo:hi]
            ss_change = -2.0 * delta * float((block @ xk).sum()) \
                + ctx.I * xk_sq * delta * delta
            logr = -ss_change * inv2s2
            if opts.mu_prior_sd is not None:
                m = self.mu[k]
                logr += (m * m - (m + delta) ** 2) / (
                    2 * opts.mu_prior_sd ** 2
                )
            p = math.exp(min(0.0, logr))
            if logu < logr:
                self.mu[k] += delta
                self.eps[:, lo:hi] -= delta * xk[None, :]
                self.ss_eps += ss_change
            if rate:
                self.s_mu_eps[k] *= math.exp(rate * (p - _ADAPT_TARGET))
            self._tally("shift", p)

        if opts.disable_spatial:
            return
        for k in range(ctx.K):
            lo, hi = ctx.support[k]
            xk = ctx.X_sup[k]
            xk_sq = float(xk @ xk)
            rho = self._rho_for(k)
            sig2 = self.sigma_beta[k] ** 2
            d_vec = 1.0 - rho + rho * ctx.n
            for cls, w_cls in zip(ctx.colors, ctx.W_color):
                nbr = w_cls @ self.beta_star[:, k]
                cond_mean = rho * nbr / d_vec[cls]
                cond_var = sig2 / d_vec[cls]
                old = self.beta_star[cls, k]
                delta = self.s_beta_eps[cls, k] * rng.standard_normal(
                    cls.size
                )
                logu = np.log(rng.random(cls.size))
                new = old + delta
                block = self.eps[cls, lo:hi]
                ss_change = -2.0 * delta * (block @ xk) \
                    + xk_sq * delta * delta
                logr = -ss_change * inv2s2 + (
                    (old - cond_mean) ** 2 - (new - cond_mean) ** 2
                ) / (2 * cond_var)
                p = np.exp(np.minimum(0.0, logr))
                accept = logu < logr
                if np.any(accept):
                    moved = cls[accept]
                    self.beta_star[moved, k] = new[accept]
                    self.eps[moved, lo:hi] -= (
                        delta[accept, None] * xk[None, :]
                    )
                    self.ss_eps += float(ss_change[accept].sum())
                if rate:
                    self.s_beta_eps[cls, k] *= np.exp(
                        rate * (p - _ADAPT_TARGET)
                    )
                self._tally("shift", p)

    def _update_eps(self, rate):
        ctx, opts, rng = self.ctx, self.opts, self.rng
        delta = self.s_eps * rng.standard_normal((ctx.I, ctx.J))
        logu = np.log(rng.random((ctx.I, ctx.J)))
        new = self.eps + delta
        logr = (self.eps ** 2 - new ** 2) / (2 * self.sigma_eps ** 2)
        if not opts.likelihood_off:
            with np.errstate(over="ignore"):
                grow = np.expm1(delta)
            logr = logr + ctx.O * delta - self.lam * grow
            logr = np.where(np.isnan(logr), -np.inf, logr)
        p = np.exp(np.minimum(0.0, logr))
        accept = logu < logr
        self.eps[accept] = new[accept]
        if not opts.likelihood_off:
            self.eta[accept] += delta[accept]
            self.lam[accept] *= 1.0 + grow[accept]
        self.ss_eps = float(np.sum(self.eps * self.eps))
        if rate:
            self.s_eps *= np.exp(rate * (p - _ADAPT_TARGET))
        self._tally("eps", p)

    def _sd_rw(self, current, step, log_target):
        """Random-walk on logit(sigma / c); returns (new_value, p, accepted)."""
        c = self.opts.sd_upper
        theta = logit(current / c)
        theta_new = theta + step * self.rng.standard_normal()
        logu = math.log(self.rng.random())
        new = float(c * expit(theta_new))
        if new <= 0.0 or new >= c:  # numeric saturation of the transform
            return current, 0.0, False
        logr = (log_target(new) - log_target(current)
                + math.log(new * (c - new)) - math.log(current * (c - current)))
        p = math.exp(min(0.0, logr)) if np.isfinite(logr) else 0.0
        if logu < logr:
            return new, p, True
        return current, p, False

    def _update_sigma_beta(self, rate):
        ctx = self.ctx
        for k in range(ctx.K):
            col = self.beta_star[:, k]
            rho = self._rho_for(k)
            quad = rho * ctx.field.structure_quad(col) + (1.0 - rho) * float(
                col @ col
            )

            def target(sd, quad=quad):
                return -ctx.I * math.log(sd) - 0.5 * quad / (sd * sd)

            new, p, _ = self._sd_rw(self.sigma_beta[k], self.s_sigma[k],
                                    target)
            self.sigma_beta[k] = new
            if rate:
                self.s_sigma[k] *= math.exp(rate * (p - _ADAPT_TARGET))
            self._tally("sigma", p)

    def _update_sigma_eps(self, rate):
        n_cells = self.ctx.I * self.ctx.J
        ss = self.ss_eps

        def target(sd):
            return -n_cells * math.log(sd) - 0.5 * ss / (sd * sd)

        new, p, _ = self._sd_rw(self.sigma_eps, self.s_sigma_eps, target)
        self.sigma_eps = new
        if rate:
            self.s_sigma_eps *= math.exp(rate * (p - _ADAPT_TARGET))
        self._tally("sigma", p)

    def _leroux_quads(self):
        ctx = self.ctx
        quad_r = np.empty(ctx.K)
        quad_i = np.empty(ctx.K)
        for k in range(ctx.K):
            col = self.beta_star[:, k]
            quad_r[k] = ctx.field.structure_quad(col)
            quad_i[k] = float(col @ col)
        return quad_r, quad_i

    def _update_rho(self, rate):
        ctx, rng = self.ctx, self.rng
        lam_eig = ctx.field.eigenvalues
        quad_r, quad_i = self._leroux_quads()
        inv_var = 1.0 / self.sigma_beta ** 2
        per_basis = self.rho.shape[0] > 1

        def block_target(rho, ks):
            logdet = float(np.log(rho * lam_eig + (1.0 - rho)).sum())
            quad = float(
                ((rho * quad_r[ks] + (1.0 - rho) * quad_i[ks]) * inv_var[ks])
                .sum()
            )
            return 0.5 * len(ks) * logdet - 0.5 * quad

        for r_idx in range(self.rho.shape[0]):
            ks = [r_idx] if per_basis else list(range(ctx.K))
            current = float(self.rho[r_idx])
            theta = logit(current / RHO_MAX)
            theta_new = theta + self.s_rho[r_idx] * rng.standard_normal()
            logu = math.log(rng.random())
            new = float(RHO_MAX * expit(theta_new))
            if new <= 0.0 or new >= RHO_MAX:
                p = 0.0
            else:
                logr = (block_target(new, ks) - block_target(current, ks)
                        + math.log(new * (RHO_MAX - new))
                        - math.log(current * (RHO_MAX - current)))
                p = math.exp(min(0.0, logr)) if np.isfinite(logr) else 0.0
                if logu < logr:
                    self.rho[r_idx] = new
            if rate:
                self.s_rho[r_idx] *= math.exp(rate * (p - _ADAPT_TARGET))
            self._tally("rho", p)

    # -- main loop -----------------------------------------------------------

    def run(self):
        ctx, opts = self.ctx, self.opts
        n_keep = (opts.iterations - opts.burn_in) // opts.thin
        K, n_rho = ctx.K, self.rho.shape[0]
        out = {
            "gamma": np.empty((n_keep, 7)),
            "mu": np.empty((n_keep, K)),
            "beta_star": np.empty((n_keep, ctx.I, K)),
            "rho": np.empty((n_keep, n_rho)),
            "sigma_beta": np.empty((n_keep, K)),
            "sigma_eps": np.empty(n_keep),
        }
        if opts.include_eps and opts.store_eps:
            out["eps"] = np.empty((n_keep, ctx.I, ctx.J))

        self._check_initial_state()
        report_every = max(1, opts.iterations // 10)
        kept = 0
        for t in range(1, opts.iterations + 1):
            rate = (t + 20.0) ** -0.6 if t <= opts.burn_in else 0.0
            if opts.include_dow:
                self._update_gamma(rate)
            self._update_mu(rate)
            if not opts.disable_spatial:
                self._update_beta_star(rate)
                self._update_shift(rate)
            if opts.include_eps:
                self._update_trend_eps_swaps(rate)
                self._update_eps(rate)
            if not opts.disable_spatial:
                self._update_sigma_beta(rate)
            if opts.include_eps:
                self._update_sigma_eps(rate)
            if not opts.disable_spatial and opts.fix_rho is None:
                self._update_rho(rate)

            if not opts.likelihood_off and t % 1000 == 0:
                self._refresh_caches()  # cap incremental-cache round-off

            if t > opts.burn_in and (t - opts.burn_in) % opts.thin == 0:
                out["gamma"][kept] = self.gamma
                out["mu"][kept] = self.mu
                out["beta_star"][kept] = self.beta_star
                out["rho"][kept] = self.rho
                out["sigma_beta"][kept] = self.sigma_beta
                out["sigma_eps"][kept] = self.sigma_eps
                if "eps" in out:
                    out["eps"][kept] = self.eps
                kept += 1
            if opts.progress and (t % report_every == 0 or t == opts.iterations):
                self._report(t)
        out["acceptance"] = {
            name: (s / max(cnt, 1)) for name, (s, cnt) in self.acc.items()
        }
        return out

    def _check_initial_state(self):
        if self.opts.likelihood_off:
            return
        value = float(np.sum(self.ctx.O * self.eta) - self.lam.sum())
        if not np.isfinite(value):
            raise RuntimeError(
                "non-finite log-posterior at initialization: "
                f"eta range [{self.eta.min():.3g}, {self.eta.max():.3g}], "
                f"max count {self.ctx.O.max():.3g}"
            )

    def _report(self, t):
        rates = ", ".join(
            f"{name}={s / max(cnt, 1):.2f}"
            for name, (s, cnt) in self.acc.items() if cnt
        )
        print(
            f"[arealrt] chain {self.idx + 1} iter {t}/{self.opts.iterations} "
            f"acc: {rates}",
            file=sys.stderr,
        )


def _run_chain(ctx, opts, seed_seq, chain_idx):
    return _Chain(ctx, opts, seed_seq, chain_idx).run()


# ---------------------------------------------------------------------------
# public fitting API
# ---------------------------------------------------------------------------

class SpatioTemporalPoissonModel(BaseEstimator):
    """Spline-temporal / CAR-spatial Poisson model fit by adaptive MCMC.

    Follows the scikit-learn estimator protocol: hyperparameters in the
    constructor (``get_params`` / ``set_params`` work as usual) and fitted
    results in trailing-underscore attributes after :meth:`fit`.

    Parameters
    ----------
    knot_spacing : int
        Days between interior spline knots (14 = biweekly).
    chains, iterations, burn_in, thin : int
        MCMC schedule; ``(iterations - burn_in) // thin`` draws are kept
        per chain.
    seed : int
        Master seed; chains get independent child streams.
    rho_mode : {"common", "per_basis"}
        One shared spatial mixing parameter or one per basis function.
    uniform_sd_upper : float
        Upper bound c of the Uniform(0, c) priors on all sd parameters.
    include_dow, include_eps : bool
        Switch the weekly cycle / overdispersion terms on or off.
    store_eps : bool
        Keep eps draws (memory heavy at full scale) for later use.
    likelihood_off : bool
        Sample from the prior alone (sampler-validation runs).
    disable_spatial : bool
        Drop the beta* fields entirely (reduced oracle models).
    fix_rho : float or None
        Freeze the spatial mixing parameter instead of sampling it.
    mu_prior_sd, gamma_prior_sd : float or None
        Replace the improper flat priors on mu / gamma by N(0, sd^2);
        needed for prior-recovery checks, None reproduces the model
        default.
    n_jobs : int
        Chains run in parallel processes when != 1 (results are identical
        to the sequential run).
    progress : bool
        Report iteration counts and acceptance rates to stderr.

    Attributes
    ----------
    draws_ : PosteriorDraws
    basis_ : SplineBasis
    acceptance_ : dict
        Mean acceptance probability per update block and chain.
    """

    def __init__(self, knot_spacing=14, chains=5, iterations=5000,
                 burn_in=2000, thin=15, seed=0, rho_mode="common",
                 uniform_sd_upper=10.0, include_dow=True, include_eps=True,
                 store_eps=True, likelihood_off=False, disable_spatial=False,
                 fix_rho=None, mu_prior_sd=None, gamma_prior_sd=None,
                 n_jobs=1, progress=False, basis=None):
        self.knot_spacing = knot_spacing
        self.chains = chains
        self.iterations = iterations
        self.burn_in = burn_in
        self.thin = thin
        self.seed = seed
        self.rho_mode = rho_mode
        self.uniform_sd_upper = uniform_sd_upper
        self.include_dow = include_dow
        self.include_eps = include_eps
        self.store_eps = store_eps
        self.likelihood_off = likelihood_off
        self.disable_spatial = disable_spatial
        self.fix_rho = fix_rho
        self.mu_prior_sd = mu_prior_sd
        self.gamma_prior_sd = gamma_prior_sd
        self.n_jobs = n_jobs
        self.progress = progress
        self.basis = basis  # override the spline design (oracle tests)

    def fit(self, dataset, graph):
        """Run all chains on a SurveillanceDataset + AdjacencyGraph."""
        if graph.I != dataset.I:
            raise ValueError(
                f"adjacency has {graph.I} areas, dataset has {dataset.I}"
            )
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        n_keep = (self.iterations - self.burn_in) // self.thin
        if n_keep < 1:
            raise ValueError("schedule keeps no draws; lower thin or burn_in")
        if self.rho_mode not in ("common", "per_basis"):
            raise ValueError(f"unknown rho_mode {self.rho_mode!r}")

        basis = self.basis
        if basis is None:
            basis = build_basis(dataset.J, self.knot_spacing)
        ctx = _FitContext(dataset, basis, graph)
        opts = _Options(
            iterations=self.iterations, burn_in=self.burn_in, thin=self.thin,
            rho_mode=self.rho_mode, sd_upper=self.uniform_sd_upper,
            include_dow=self.include_dow, include_eps=self.include_eps,
            store_eps=self.store_eps, likelihood_off=self.likelihood_off,
            disable_spatial=self.disable_spatial, fix_rho=self.fix_rho,
            mu_prior_sd=self.mu_prior_sd, gamma_prior_sd=self.gamma_prior_sd,
            progress=self.progress,
        )
        seed_seqs = np.random.SeedSequence(self.seed).spawn(self.chains)
        if self.n_jobs == 1:
            results = [
                _run_chain(ctx, opts, ss, c)
                for c, ss in enumerate(seed_seqs)
            ]
        else:
            from joblib import Parallel, delayed

            results = Parallel(n_jobs=self.n_jobs)(
                delayed(_run_chain)(ctx, opts, ss, c)
                for c, ss in enumerate(seed_seqs)
            )

        def stack(name):
            return np.stack([r[name] for r in results])

        rho = stack("rho")
        if self.rho_mode == "common":
            rho = rho[:, :, 0]
        self.draws_ = PosteriorDraws(
            gamma=stack("gamma"), mu=stack("mu"),
            beta_star=stack("beta_star"),
            eps=stack("eps") if "eps" in results[0] else None,
            rho=rho, sigma_beta=stack("sigma_beta"),
            sigma_eps=stack("sigma_eps"),
            iterations=self.burn_in + self.thin * np.arange(1, n_keep + 1),
            burn_in=self.burn_in, thin=self.thin,
        )
        self.basis_ = basis
        self.acceptance_ = [r["acceptance"] for r in results]
        return self


def fit(dataset, graph, config, **overrides):
    """Fit with a :class:`~arealrt.data_io.RunConfig`; returns the draws."""
    params = dict(
        knot_spacing=config.knot_spacing_days,
        chains=config.chains,
        iterations=config.iterations_per_chain,
        burn_in=config.burn_in,
        thin=config.thin,
        seed=config.seed,
        rho_mode=config.rho_mode,
        uniform_sd_upper=config.uniform_sd_upper,
    )
    params.update(overrides)
    return SpatioTemporalPoissonModel(**params).fit(dataset, graph).draws_


# ---------------------------------------------------------------------------
# convergence diagnostics
# ---------------------------------------------------------------------------

def _split(x):
    """Split each chain in half -> (2C, N//2) sequences (odd tail dropped)."""
    n_half = x.shape[1] // 2
    return np.concatenate([x[:, :n_half], x[:, n_half:2 * n_half]], axis=0)


def _split_rhat(x):
    seqs = _split(np.asarray(x, dtype=float))
    m, n = seqs.shape
    if n < 2:
        return np.nan
    w = seqs.var(axis=1, ddof=1).mean()
    b_over_n = seqs.mean(axis=1).var(ddof=1)
    if w == 0.0:
        # identical constant sequences: R-hat 1 by convention
        return 1.0 if b_over_n == 0.0 else np.inf
    var_hat = (n - 1) / n * w + b_over_n
    return float(np.sqrt(var_hat / w))


def _ess(x):
    """Effective sample size from split chains, initial-positive-sequence."""
    seqs = _split(np.asarray(x, dtype=float))
    m, n = seqs.shape
    total = x.size
    if n < 4:
        return float(total)
    w = seqs.var(axis=1, ddof=1).mean()
    b_over_n = seqs.mean(axis=1).var(ddof=1)
    if w == 0.0:
        return float(total)
    var_hat = (n - 1) / n * w + b_over_n
    a = seqs - seqs.mean(axis=1, keepdims=True)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(a, nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :n] / n
    mean_acov = acov.mean(axis=0)
    rho = 1.0 - (w - mean_acov) / var_hat
    tau = 1.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
        t += 2
    return float(np.clip(total / tau, 1.0, total))


def diagnostics(draws):
    """Posterior summary table: moments, quantiles, split R-hat and n_eff.

    One row per scalar parameter. R-hat needs at least two chains and is
    reported absent (NaN) for a single chain.
    """
    import pandas as pd

    rows = []
    single = draws.n_chains < 2
    for name, series in draws.scalar_series().items():
        flat = series.reshape(-1)
        rows.append({
            "parameter": name,
            "mean": flat.mean(),
            "sd": flat.std(ddof=1) if flat.size > 1 else 0.0,
            "q2.5": np.percentile(flat, 2.5),
            "q50": np.percentile(flat, 50),
            "q97.5": np.percentile(flat, 97.5),
            "rhat": np.nan if single else _split_rhat(series),
            "n_eff": _ess(series),
        })
    return pd.DataFrame(rows).set_index("parameter")


# ---------------------------------------------------------------------------
# fitted incidence curves
# ---------------------------------------------------------------------------

def fitted_curves(draws, dataset, basis, area=None, include_dow=True,
                  include_eps=False, chunk=64):
    """Posterior mean and 95% band of fitted daily counts.

    ``area=None`` sums over all areas (whole-region curve, computed per
    draw, not as a sum of summaries). With ``include_dow`` the curve
    carries the weekly reporting cycle; without it only the spline trend
    remains. eps is excluded unless requested: it absorbs one-day
    artifacts, not signal.
    """
    if area is not None:
        i = dataset.area_index(area) if isinstance(area, str) else int(area)
        if not 0 <= i < dataset.I:
            raise KeyError(f"unknown area {area!r}")
    if include_eps and draws.eps is None:
        raise ValueError("eps draws were not stored")
    import pandas as pd

    C, N = draws.n_chains, draws.n_kept
    J = dataset.J
    log_pop = np.log(dataset.populations)
    dow_idx = np.arange(J) % 7
    mu = draws.mu.reshape(C * N, -1)
    beta = draws.beta_star.reshape(C * N, dataset.I, -1)
    gamma = draws.gamma.reshape(C * N, 7)
    curves = np.empty((C * N, J))
    for s in range(0, C * N, chunk):
        e = min(s + chunk, C * N)
        coef = mu[s:e, None, :] + beta[s:e]
        eta = log_pop[None, :, None] + np.einsum(
            "dik,kj->dij", coef, basis.X
        )
        if include_dow:
            eta = eta + gamma[s:e][:, dow_idx][:, None, :]
        if include_eps:
            eta = eta + draws.eps.reshape(C * N, dataset.I, J)[s:e]
        lam = np.exp(eta)
        curves[s:e] = lam.sum(axis=1) if area is None else lam[:, i, :]
    return pd.DataFrame({
        "date": [d.isoformat() for d in dataset.dates],
        "mean": curves.mean(axis=0),
        "lo95": np.percentile(curves, 2.5, axis=0),
        "hi95": np.percentile(curves, 97.5, axis=0),
    })

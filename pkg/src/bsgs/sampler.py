"""Gibbs sampler for bi-level sparse group regression with spike-and-slab priors.

Coefficients are parameterized as theta_ji = v_ji * b_ji.  Group vectors b_j
carry a hard spike-and-slab prior (point mass at zero against a standard
normal slab), and the within-group scales v_ji carry a second spike-and-slab
(point mass against a half-normal slab with group standard deviation tau_j).
The cycle is: error variance, within-group scales, group vectors, group
standard deviations (Metropolis-Hastings), mixture weights.

Numerically delicate pieces: the mixture weights of both spike draws are
computed in log space (the slab factor exp(nu^2 / 2 eta^2) overflows
routinely otherwise), and positive-truncated normal draws switch to a tail
rejection sampler when the mass sits far above the truncation point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky as _cholesky, solve_triangular
from scipy.special import ndtr, ndtri

from .volatility import SVConfig, SVState, normalize_variant, one_step_ahead_variance, sv_sweep

LOG2PI = math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)


@dataclass
class PriorHyperparams:
    """All prior constants of the hierarchy.

    c0/d0 and c1/d1 parameterize the Beta priors of the group- and
    within-group spike weights; a0 with either a fixed a1 or a Gamma(e0, e1)
    hyperprior parameterizes the inverse-gamma error variance; lambda1 is
    the scale of the Gamma(1/2, lambda1_j) prior on each tau_j.
    """

    c0: float | None
    c1: float | None
    d0: float = 1.0
    d1: float = 1.0
    a0: float = 2.5
    a1: float = 1.0
    e0: float = 5.0
    e1: float = 10.0 / 3.0
    lambda0: float = 0.5
    lambda1: float | np.ndarray = 1.0
    group_specific_pi1: bool = False
    hierarchical_a1: bool = False

    def __post_init__(self):
        if self.lambda0 != 0.5:
            raise ValueError("lambda0 is fixed at 1/2 by the prior specification")
        # c0/c1 may stay None in a template awaiting data-driven selection
        for name in ("c0", "c1"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("d0", "d1", "a0", "a1", "e0", "e1"):
            if getattr(self, name) is None or getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        lam = np.atleast_1d(np.asarray(self.lambda1, dtype=float))
        if np.any(lam <= 0):
            raise ValueError("lambda1 entries must be strictly positive")

    def lambda1_vector(self, n_groups):
        lam = np.atleast_1d(np.asarray(self.lambda1, dtype=float))
        if lam.size == 1:
            return np.full(n_groups, lam[0])
        if lam.size != n_groups:
            raise ValueError(f"lambda1 has {lam.size} entries for {n_groups} groups")
        return lam.copy()


@dataclass
class McmcSettings:
    sweeps: int
    burn_in: int
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.sweeps <= self.burn_in:
            raise ValueError("sweeps must exceed burn_in")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if (self.sweeps - self.burn_in) % self.thin:
            raise ValueError("(sweeps - burn_in) must be divisible by thin")

    @property
    def n_retained(self):
        return (self.sweeps - self.burn_in) // self.thin


@dataclass
class ChainState:
    b: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    tau: np.ndarray
    pi0: float
    pi1: float | np.ndarray
    sigma2: float
    gamma0: np.ndarray
    gamma1: np.ndarray
    a1: float | None = None
    sv: SVState | None = None

    def pi1_of(self, j):
        return self.pi1[j] if isinstance(self.pi1, np.ndarray) else self.pi1


@dataclass
class ChainOutput:
    """Thinned posterior draws plus chain-level summaries."""

    theta_draws: np.ndarray       # (S, sum g_j)
    sigma2_draws: np.ndarray      # (S,); under SV this is the forecast-error variance
    pred_var_draws: np.ndarray    # (S,) one-step-ahead forecast-error variance
    loglik_draws: np.ndarray      # (S,) conditional data log-likelihood per draw
    inclusion_group: np.ndarray   # (N,) share of draws with the group active
    inclusion_within: np.ndarray  # (P,) share of draws with the coefficient nonzero
    mcmc_meta: dict
    sv_draws: dict | None = None

    @property
    def n_retained(self):
        return self.theta_draws.shape[0]


@dataclass
class ForecastDensity:
    """Posterior predictive as an equally weighted mixture of Gaussians."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float).ravel()
        self.variances = np.asarray(self.variances, dtype=float).ravel()
        if self.variances.size == 1 and self.means.size > 1:
            self.variances = np.full(self.means.size, self.variances[0])
        if self.weights is None:
            self.weights = np.full(self.means.size, 1.0 / self.means.size)
        else:
            self.weights = np.asarray(self.weights, dtype=float).ravel()
        if not np.allclose(self.weights.sum(), 1.0, atol=1e-9):
            raise ValueError("component weights must sum to one")
        if np.any(self.variances <= 0):
            raise ValueError("component variances must be positive")

    def mean(self):
        return float(self.weights @ self.means)

    def variance(self):
        m = self.mean()
        return float(self.weights @ (self.variances + self.means ** 2) - m * m)

    def logpdf(self, y):
        z2 = (y - self.means) ** 2 / self.variances
        comp = np.log(self.weights) - 0.5 * (LOG2PI + np.log(self.variances) + z2)
        m = comp.max()
        if not math.isfinite(m):
            return float(m)
        return float(m + np.log(np.exp(comp - m).sum()))

    def cdf(self, y):
        return float(self.weights @ ndtr((y - self.means) / np.sqrt(self.variances)))


def log_ndtr(x):
    """log of the standard normal cdf, safe for very negative arguments."""
    if x >= 4.0:
        return math.log1p(-0.5 * math.erfc(x / _SQRT2))
    if x >= -30.0:
        return math.log(0.5 * math.erfc(-x / _SQRT2))
    xsq = x * x
    corr = -1.0 / xsq + 3.0 / xsq ** 2 - 15.0 / xsq ** 3 + 105.0 / xsq ** 4
    return -0.5 * xsq - math.log(-x) - 0.5 * LOG2PI + math.log1p(corr)


def spike_prob_within(eta2, nu, tau, pi1):
    """Conditional probability that a within-group scale sits in the spike.

    Equals pi1 / (pi1 + 2 (1 - pi1) (eta / tau) exp(nu^2 / 2 eta^2)
    Phi(nu / eta)), evaluated in log space so the slab factor cannot
    overflow.
    """
    if pi1 >= 1.0:
        return 1.0
    if pi1 <= 0.0:
        return 0.0
    eta = math.sqrt(eta2)
    log_slab = (math.log(2.0 * (1.0 - pi1)) + 0.5 * math.log(eta2) - math.log(tau)
                + nu * nu / (2.0 * eta2) + log_ndtr(nu / eta))
    log_spike = math.log(pi1)
    return math.exp(log_spike - np.logaddexp(log_spike, log_slab))


def spike_prob_group(pi0, log_slab_factor):
    """Conditional probability that a whole group sits in the spike.

    log_slab_factor = 0.5 log|Sigma_j| + 0.5 mu_j' Sigma_j^{-1} mu_j.
    """
    if pi0 >= 1.0:
        return 1.0
    if pi0 <= 0.0:
        return 0.0
    log_spike = math.log(pi0)
    log_slab = math.log1p(-pi0) + log_slab_factor
    return math.exp(log_spike - np.logaddexp(log_spike, log_slab))


def truncnorm_positive(rng, mean, sd):
    """One draw from N(mean, sd^2) truncated to (0, inf).

    Inverse-cdf for moderate standardized truncation points; for a
    truncation point deep in the upper tail (alpha > 6) the inverse cdf
    loses precision and an exponential rejection sampler takes over.
    """
    alpha = -mean / sd
    if alpha <= 6.0:
        upper_mass = float(ndtr(-alpha))   # survival function, exact in the tail
        tail = upper_mass * (1.0 - rng.random())
        z = -float(ndtri(tail))
        return mean + sd * max(z, alpha)
    lam = 0.5 * (alpha + math.sqrt(alpha * alpha + 4.0))
    while True:
        z = alpha + rng.exponential(1.0 / lam)
        if math.log(rng.random()) <= -0.5 * (z - lam) ** 2:
            return mean + sd * z


class GibbsSampler:
    """Stateful Gibbs cycle over one grouped design.

    Exposes the individual conditional steps so tests can freeze parts of
    the state; `sweep` runs them in the order error variance, within-group
    scales, group vectors, group standard deviations, mixture weights.
    """

    def __init__(self, design, prior, seed=0, volatility="homoskedastic", sv_config=None,
                 refresh_every=500):
        if prior.c0 is None or prior.c1 is None:
            raise ValueError("prior template has unselected c0/c1; run the tuner or set them")
        self.design = design
        self.prior = prior
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.variant = normalize_variant(volatility)
        self.refresh_every = refresh_every

        self.y = design.y.copy()
        self.Z = np.ascontiguousarray(design.Z)
        self.Zcols = np.ascontiguousarray(design.Z.T)
        self.colsq = np.einsum("ij,ij->i", self.Zcols, self.Zcols)
        self.bounds = design.group_bounds()
        self.N = design.n_groups
        self.P = design.width
        self.T = design.T
        self.Zg = [self.Z[:, s:e] for s, e in self.bounds]
        self.G = [zg.T @ zg for zg in self.Zg]
        self.group_of = np.concatenate([np.full(e - s, j, dtype=int)
                                        for j, (s, e) in enumerate(self.bounds)])
        self.lambda1 = prior.lambda1_vector(self.N)

        var_y = float(np.var(self.y))
        pi1_init = np.full(self.N, 0.5) if prior.group_specific_pi1 else 0.5
        self.state = ChainState(
            b=np.zeros(self.P), v=np.zeros(self.P), theta=np.zeros(self.P),
            tau=np.ones(self.N), pi0=0.5, pi1=pi1_init,
            sigma2=var_y if var_y > 0 else 1.0,
            gamma0=np.ones(self.N, dtype=np.int8), gamma1=np.ones(self.P, dtype=np.int8),
            a1=prior.a1 if prior.hierarchical_a1 else None,
        )
        self.sv_config = None
        if self.variant != "homoskedastic":
            self.sv_config = sv_config or SVConfig.for_variant(self.variant)
            self.state.sv = SVState.initial(self.T, self.sv_config, self.state.sigma2)

        self.resid = self.y - self.Z @ self.state.theta
        self._sweep_count = 0
        self.accept_tau = np.zeros(self.N)
        self._tau_proposals = 0
        self._inv_w = None       # per-observation inverse variances (SV only)
        self._colsq_w = None
        self._Gw = None

    # -- plumbing ---------------------------------------------------------

    def set_y(self, y):
        """Swap the response (used by prior-recovery diagnostics)."""
        y = np.asarray(y, dtype=float).ravel()
        if y.size != self.T:
            raise ValueError("response length mismatch")
        self.y = y
        self.resid = self.y - self.Z @ self.state.theta

    def _refresh_weights(self):
        if self.state.sv is None:
            self._inv_w = None
            return
        self._inv_w = 1.0 / self.state.sv.variances()
        self._colsq_w = self.Zcols ** 2 @ self._inv_w
        self._Gw = [zg.T @ (zg * self._inv_w[:, None]) for zg in self.Zg]

    def obs_variances(self):
        if self.state.sv is None:
            return np.full(self.T, self.state.sigma2)
        return self.state.sv.variances()

    def loglik(self):
        """Gaussian log-likelihood of y at the current state."""
        if self.state.sv is None:
            s2 = self.state.sigma2
            return -0.5 * (self.T * (LOG2PI + math.log(s2)) + self.resid @ self.resid / s2)
        w = self.state.sv.variances()
        return -0.5 * float(np.sum(LOG2PI + np.log(w) + self.resid ** 2 / w))

    # -- conditional steps -------------------------------------------------

    def step_sigma2(self):
        """Inverse-gamma error-variance draw (and its Gamma hyperprior update)."""
        st, prior = self.state, self.prior
        if st.sv is not None:
            sv_sweep(st.sv, self.resid, self.rng, self.sv_config)
            return st
        rss = float(self.resid @ self.resid)
        if not math.isfinite(rss):
            raise FloatingPointError("non-finite residual sum of squares")
        a1 = st.a1 if prior.hierarchical_a1 else prior.a1
        shape = 0.5 * self.T + prior.a0
        rate = 0.5 * rss + a1
        st.sigma2 = rate / self.rng.gamma(shape, 1.0)
        if prior.hierarchical_a1:
            self.step_a1()
        return st

    def step_a1(self):
        """Gamma(e0 + a0, e1 + 1/sigma2) refresh of the variance hyperparameter."""
        prior = self.prior
        rate = prior.e1 + 1.0 / self.state.sigma2
        self.state.a1 = self.rng.gamma(prior.e0 + prior.a0, 1.0 / rate)
        return self.state

    def coordinate_moments(self, p):
        """(eta2, nu) of the within-scale slab for coordinate p at the current state."""
        st = self.state
        j = self.group_of[p]
        z = self.Zcols[p]
        bp = st.b[p]
        if st.sv is None:
            inv_s2 = 1.0 / st.sigma2
            quad = self.colsq[p] * inv_s2
            lin = (float(z @ self.resid) + st.theta[p] * self.colsq[p]) * inv_s2
        else:
            quad = self._colsq_w[p]
            lin = float(z @ (self.resid * self._inv_w)) + st.theta[p] * quad
        eta2 = 1.0 / (bp * bp * quad + 1.0 / (st.tau[j] * st.tau[j]))
        return eta2, eta2 * bp * lin

    def within_spike_prob(self, p):
        """Conditional spike probability of coordinate p at the current state."""
        eta2, nu = self.coordinate_moments(p)
        j = self.group_of[p]
        return spike_prob_within(eta2, nu, self.state.tau[j], self.state.pi1_of(j))

    def step_v(self):
        """Spike-and-slab draw of every within-group scale, natural scan order."""
        st = self.state
        rng = self.rng
        uniforms = rng.random(self.P)
        b, v, theta, tau = st.b, st.v, st.theta, st.tau
        for p in range(self.P):
            j = self.group_of[p]
            eta2, nu = self.coordinate_moments(p)
            p_spike = spike_prob_within(eta2, nu, tau[j], st.pi1_of(j))
            if uniforms[p] < p_spike:
                st.gamma1[p] = 1
                v_new = 0.0
            else:
                st.gamma1[p] = 0
                v_new = truncnorm_positive(rng, nu, math.sqrt(eta2))
            th_old = theta[p]
            th_new = v_new * b[p]
            if th_new != th_old:
                self.resid += self.Zcols[p] * (th_old - th_new)
            v[p] = v_new
            theta[p] = th_new
        return st

    def group_moments(self, j):
        """(chol_prec, mu, log_slab_factor) of group j's slab at the current state.

        Returns (None, zero vector, 0.0) for an all-spiked scale vector,
        where the slab collapses to a standard normal.
        """
        st = self.state
        s, e = self.bounds[j]
        g = e - s
        vj = st.v[s:e]
        if not np.any(vj):
            return None, np.zeros(g), 0.0
        Zj = self.Zg[j]
        r_minus = self.resid + Zj @ st.theta[s:e]
        if st.sv is None:
            svec = vj * (Zj.T @ r_minus) / st.sigma2
            prec = self.G[j] * np.outer(vj, vj) / st.sigma2
        else:
            svec = vj * (Zj.T @ (r_minus * self._inv_w))
            prec = self._Gw[j] * np.outer(vj, vj)
        prec[np.diag_indices(g)] += 1.0
        L = _cholesky(prec, lower=True)
        mu = solve_triangular(L.T, solve_triangular(L, svec, lower=True), lower=False)
        log_slab_factor = -float(np.sum(np.log(np.diag(L)))) + 0.5 * float(svec @ mu)
        return L, mu, log_slab_factor

    def group_spike_prob(self, j):
        """Conditional spike probability of group j at the current state."""
        _, _, log_slab_factor = self.group_moments(j)
        return spike_prob_group(self.state.pi0, log_slab_factor)

    def step_b(self):
        """Spike-and-slab draw of every group vector, natural group order."""
        st = self.state
        rng = self.rng
        for j, (s, e) in enumerate(self.bounds):
            g = e - s
            vj = st.v[s:e]
            L, mu, log_slab_factor = self.group_moments(j)
            p_spike = spike_prob_group(st.pi0, log_slab_factor)
            if rng.random() < p_spike:
                st.gamma0[j] = 1
                b_new = np.zeros(g)
            elif L is None:
                st.gamma0[j] = 0
                b_new = rng.standard_normal(g)
            else:
                st.gamma0[j] = 0
                b_new = mu + solve_triangular(L.T, rng.standard_normal(g), lower=False)
            th_old = st.theta[s:e]
            th_new = vj * b_new
            st.b[s:e] = b_new
            if np.any(th_new != th_old):
                self.resid += self.Zg[j] @ (th_old - th_new)
            st.theta[s:e] = th_new
        return st

    def step_tau(self):
        """Metropolis-Hastings move of each group standard deviation tau_j.

        Proposal is exponential with mean at the current value; the
        acceptance ratio folds the Gamma(1/2, lambda1_j) prior with the
        half-normal likelihood of the retained scales.
        """
        st = self.state
        rng = self.rng
        self._tau_proposals += 1
        for j, (s, e) in enumerate(self.bounds):
            vj = st.v[s:e]
            active = vj > 0
            xi = int(np.count_nonzero(active))
            ssq = float(vj[active] @ vj[active]) if xi else 0.0
            t_old = st.tau[j]
            t_new = rng.exponential(t_old)
            assert t_new > 0.0, "exponential proposal must be positive"
            log_r = ((xi + 1.5) * math.log(t_old / t_new)
                     - 0.5 * ssq * (t_new ** -2 - t_old ** -2)
                     - (t_new - t_old) / self.lambda1[j]
                     - t_old / t_new + t_new / t_old)
            if math.log(rng.random()) < log_r:
                st.tau[j] = t_new
                self.accept_tau[j] += 1
        return st

    def step_pi(self):
        """Beta draws of the spike weights from the current indicator counts."""
        st = self.state
        prior = self.prior
        n_spike_groups = float(st.gamma0.sum())
        st.pi0 = self.rng.beta(self.N - n_spike_groups + prior.c0,
                               n_spike_groups + prior.d0)
        if prior.group_specific_pi1:
            pi1 = np.empty(self.N)
            for j, (s, e) in enumerate(self.bounds):
                n1 = float(st.gamma1[s:e].sum())
                pi1[j] = self.rng.beta((e - s) - n1 + prior.c1, n1 + prior.d1)
            st.pi1 = pi1
        else:
            n1 = float(st.gamma1.sum())
            st.pi1 = self.rng.beta(self.P - n1 + prior.c1, n1 + prior.d1)
        return st

    def sweep(self):
        self._sweep_count += 1
        if self.state.sv is not None:
            self._refresh_weights()
        self.step_sigma2()
        if self.state.sv is not None:
            self._refresh_weights()   # the volatility block moved the variances
        self.step_v()
        self.step_b()
        self.step_tau()
        self.step_pi()
        if self.refresh_every and self._sweep_count % self.refresh_every == 0:
            self.resid = self.y - self.Z @ self.state.theta
        return self.state

    def predictive_variance(self):
        """One-step-ahead forecast-error variance at the current state."""
        if self.state.sv is None:
            return self.state.sigma2
        return one_step_ahead_variance(self.state.sv, self.rng, self.sv_config)

    def tau_acceptance(self):
        if self._tau_proposals == 0:
            return np.zeros(self.N)
        return self.accept_tau / self._tau_proposals


def run_chain(design, prior, mcmc, volatility="homoskedastic", sv_config=None):
    """Run the full Gibbs cycle and collect thinned draws.

    Deterministic given (design, prior, mcmc.seed): reruns produce
    bit-identical output.  Aborts with the sweep index if the likelihood
    turns non-finite.
    """
    sampler = GibbsSampler(design, prior, seed=mcmc.seed, volatility=volatility,
                           sv_config=sv_config)
    S = mcmc.n_retained
    P = sampler.P
    theta_draws = np.empty((S, P))
    sigma2_draws = np.empty(S)
    pred_var_draws = np.empty(S)
    loglik_draws = np.empty(S)
    sv_store = None
    if sampler.state.sv is not None:
        sv_store = {"zeta_last": np.empty(S), "mu_zeta": np.empty(S), "phi_zeta": np.empty(S),
                    "sigma2_zeta": np.empty(S), "nu": np.empty(S), "p_omega": np.empty(S),
                    "omega_prob": np.zeros(design.T)}
    k = 0
    zeta_accept = 0.0
    for s in range(1, mcmc.sweeps + 1):
        sampler.sweep()
        ll = sampler.loglik()
        if not math.isfinite(ll):
            raise FloatingPointError(f"non-finite likelihood at sweep {s}")
        if s > mcmc.burn_in and (s - mcmc.burn_in) % mcmc.thin == 0:
            st = sampler.state
            theta_draws[k] = st.theta
            loglik_draws[k] = ll
            pred_var_draws[k] = sampler.predictive_variance()
            sigma2_draws[k] = st.sigma2 if st.sv is None else pred_var_draws[k]
            if sv_store is not None:
                sv_store["zeta_last"][k] = st.sv.zeta[-1]
                sv_store["mu_zeta"][k] = st.sv.mu_zeta
                sv_store["phi_zeta"][k] = st.sv.phi_zeta
                sv_store["sigma2_zeta"][k] = st.sv.sigma2_zeta
                sv_store["nu"][k] = st.sv.nu
                sv_store["p_omega"][k] = st.sv.p_omega
                sv_store["omega_prob"] += (st.sv.omega_t > 1.0)
                zeta_accept += st.sv.accept_zeta
            k += 1
    active = theta_draws != 0.0
    inclusion_within = active.mean(axis=0)
    inclusion_group = np.array([active[:, s:e].any(axis=1).mean()
                                for s, e in sampler.bounds])
    if sv_store is not None:
        sv_store["omega_prob"] /= S
        sv_store["zeta_accept"] = zeta_accept / S
    meta = {
        "sweeps": mcmc.sweeps, "burn_in": mcmc.burn_in, "thin": mcmc.thin, "seed": mcmc.seed,
        "volatility": sampler.variant, "tau_acceptance": sampler.tau_acceptance(),
        "partition": design.partition, "group_labels": design.group_labels,
    }
    if design.scale_info and "y_mean" in design.scale_info:
        meta["centering"] = {"y_mean": design.scale_info["y_mean"],
                             "column_means": design.scale_info["column_means"]}
    return ChainOutput(theta_draws, sigma2_draws, pred_var_draws, loglik_draws,
                       inclusion_group, inclusion_within, meta, sv_store)


def posterior_predictive(chain, z_new):
    """Posterior predictive density at new design rows.

    One Gaussian component per retained draw with mean z' theta and the
    draw's forecast-error variance.  Rows are expressed on the original
    scale; when the chain was run on a centered design, the stored means
    map them back.  Returns a single ForecastDensity for a 1-d input, a
    list for a matrix of rows.
    """
    z = np.asarray(z_new, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != chain.theta_draws.shape[1]:
        raise ValueError(f"design row width {z.shape[1]} does not match chain width"
                         f" {chain.theta_draws.shape[1]}")
    shift = 0.0
    centering = chain.mcmc_meta.get("centering")
    if centering:
        z = z - np.asarray(centering["column_means"])
        shift = centering["y_mean"]
    means = chain.theta_draws @ z.T + shift
    out = [ForecastDensity(means[:, k], chain.pred_var_draws) for k in range(z.shape[0])]
    return out[0] if single else out

"""Data-driven selection of the spike-weight hyperparameters (c0, c1).

The admissible region has analytic lower bounds that grow with the number
of groups and an assumed sparsity level; within it, candidate pairs are
scored by the Deviance Information Criterion of shortened chains and the
minimizer wins, ties broken toward the sparser (larger) pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .sampler import LOG2PI, McmcSettings, PriorHyperparams, run_chain

TUNING_SWEEPS = 10_000
TUNING_BURN_IN = 2_000


@dataclass
class GridSpec:
    """Random-search budget over a rectangle of (c0, c1) values."""

    c0_range: tuple
    c1_range: tuple
    points: int
    seed: int = 0
    analytic_bounds: tuple | None = None   # (c0_min, c1_min) when known

    def __post_init__(self):
        if self.points < 1:
            raise ValueError("points must be >= 1")
        for name, (lo, hi) in (("c0_range", self.c0_range), ("c1_range", self.c1_range)):
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lower <= upper")
        if self.analytic_bounds is not None:
            c0_min, c1_min = self.analytic_bounds
            if self.c0_range[0] < c0_min or self.c1_range[0] < c1_min:
                raise ValueError(
                    f"grid lower bounds ({self.c0_range[0]}, {self.c1_range[0]}) fall below"
                    f" the analytic lower bounds ({c0_min:.4g}, {c1_min:.4g})")


def default_hyperparams(N, T, g):
    """Prior template with the reference defaults, c0/c1 left for selection.

    lambda1_j = log(log(max(N, T))), which requires max(N, T) >= 3 to be
    positive; d0 = d1 = 1; the error variance uses the hierarchical
    Gamma(e0, e1) hyperprior with a0 = 2.5, e0 = 5, e1 = e0/(a0 - 1).
    """
    if max(N, T) < 3:
        raise ValueError("max(N, T) must be >= 3 for log(log(max(N, T))) to be positive")
    lam = math.log(math.log(max(N, T)))
    return PriorHyperparams(
        c0=None, c1=None, d0=1.0, d1=1.0,
        a0=2.5, e0=5.0, e1=5.0 / 1.5,
        lambda1=lam,
        group_specific_pi1=True, hierarchical_a1=True,
    )


def c_lower_bounds(N, g, s0gr_guess=None, u0=1.0, u1=1.0, k0=1.0, k1=1.0):
    """Analytic lower bounds for (c0, c1) given an assumed group sparsity.

    c0_min = 1 - N + N^(u0+1)/k0 and c1_min = 1 - Ng + (s0gr g)^u1 Ng / k1.
    u0 and u1 must exceed log(2)/log(N) and log(2)/log(s0gr g); in
    applications s0gr is unknown and a conservative guess (default
    max(1, N/10)) widens the search region.
    """
    if N <= 1:
        raise ValueError("need N > 1")
    if k0 <= 0 or k1 <= 0:
        raise ValueError("k0 and k1 must be positive")
    if s0gr_guess is None:
        s0gr_guess = max(1, N // 10)
    if not 1 <= s0gr_guess <= N:
        raise ValueError("s0gr_guess must lie in [1, N]")
    lo_u0 = math.log(2.0) / math.log(N)
    if u0 <= lo_u0:
        raise ValueError(f"u0={u0} violates u0 > log(2)/log(N) = {lo_u0:.6g}")
    sg = s0gr_guess * g
    if sg <= 1:
        raise ValueError("s0gr_guess * g must exceed 1")
    lo_u1 = math.log(2.0) / math.log(sg)
    if u1 <= lo_u1:
        raise ValueError(f"u1={u1} violates u1 > log(2)/log(s0gr*g) = {lo_u1:.6g}")
    c0_min = 1.0 - N + N ** (u0 + 1.0) / k0
    c1_min = 1.0 - N * g + sg ** u1 * N * g / k1
    return c0_min, c1_min


def gaussian_loglik(y, Z, theta, sigma2):
    resid = y - Z @ theta
    T = y.size
    return -0.5 * (T * (LOG2PI + math.log(sigma2)) + float(resid @ resid) / sigma2)


def dic(chain, design):
    """Deviance Information Criterion from the chain's stored log-likelihoods.

    DIC = -4 mean_s log f(y | theta_s, sigma2_s) + 2 log f(y | theta_hat,
    sigma2_hat), with the elementwise posterior median for theta and the
    posterior mean for sigma2 as the plug-in point.
    """
    if chain.n_retained == 0:
        raise ValueError("empty chain")
    if chain.mcmc_meta.get("volatility", "homoskedastic") != "homoskedastic":
        raise ValueError("DIC tuning is defined on the homoskedastic likelihood")
    theta_hat = np.median(chain.theta_draws, axis=0)
    sigma2_hat = float(chain.sigma2_draws.mean())
    ll_hat = gaussian_loglik(design.y, design.Z, theta_hat, sigma2_hat)
    return -4.0 * float(chain.loglik_draws.mean()) + 2.0 * ll_hat


def _evaluate_point(design, prior_template, c0, c1, mcmc, index):
    seed = int(np.random.SeedSequence([mcmc.seed, index]).generate_state(1)[0])
    prior = replace(prior_template, c0=float(c0), c1=float(c1))
    settings = McmcSettings(mcmc.sweeps, mcmc.burn_in, mcmc.thin, seed)
    try:
        chain = run_chain(design, prior, settings)
        return dic(chain, design), ""
    except Exception as exc:   # annotate and continue with the rest of the grid
        return math.nan, f"{type(exc).__name__}: {exc}"


def select_c(design, prior_template, grid, mcmc_short=None, n_jobs=1):
    """Random-search the (c0, c1) rectangle and return the DIC minimizer.

    Returns (c0, c1, table) where the table holds one row per sampled grid
    point (columns: index, c0, c1, dic, error).  Chain failures are
    annotated in the table and skipped in the argmin.  Deterministic given
    the GridSpec seed.
    """
    if mcmc_short is None:
        mcmc_short = McmcSettings(TUNING_SWEEPS, TUNING_BURN_IN, thin=5, seed=grid.seed)
    rng = np.random.default_rng(grid.seed)
    c0s = rng.uniform(grid.c0_range[0], grid.c0_range[1], grid.points)
    c1s = rng.uniform(grid.c1_range[0], grid.c1_range[1], grid.points)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_evaluate_point)(design, prior_template, c0s[i], c1s[i], mcmc_short, i)
        for i in range(grid.points))
    table = pd.DataFrame({
        "index": np.arange(grid.points),
        "c0": c0s, "c1": c1s,
        "dic": [r[0] for r in results],
        "error": [r[1] for r in results],
    })
    ok = table[np.isfinite(table["dic"])]
    if ok.empty:
        raise RuntimeError("every tuning chain failed; see the returned table")
    best_dic = ok["dic"].min()
    ties = ok[ok["dic"] == best_dic]
    best = ties.sort_values(["c0", "c1"], ascending=False).iloc[0]
    return float(best["c0"]), float(best["c1"]), table

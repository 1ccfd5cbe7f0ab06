"""Stochastic volatility with Student-t tails and occasional outliers.

The regression error is u_t ~ N(0, tau_t * omega_t * exp(zeta_t)) where
tau_t is the inverse-gamma scale mixing a Student-t, omega_t is a two-part
outlier multiplier (1, or uniform on (2, omega_bar)), and the log-volatility
zeta_t follows a stationary AR(1).  These steps replace the homoskedastic
sigma^2 draw inside the Gibbs cycle.

The AR(1)-parameter, degrees-of-freedom and outlier-probability priors are
implementation choices (the error-model literature offers no single
convention); they are collected in SVConfig with conservative defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

LOG2PI = math.log(2.0 * math.pi)

VOLATILITY_VARIANTS = ("homoskedastic", "sv", "sv_t", "sv_outlier", "sv_t_outlier")


def normalize_variant(name):
    key = str(name).lower().replace("-", "_").replace(" ", "_")
    if key not in VOLATILITY_VARIANTS:
        raise ValueError(f"unknown volatility variant {name!r}; choose from {VOLATILITY_VARIANTS}")
    return key


@dataclass
class SVConfig:
    student_t: bool = True
    outliers: bool = True
    omega_bar: float = 10.0
    n_grid: int = 50                 # quadrature/draw grid size for the outlier branch
    mh_step: float = 0.3             # single-site random-walk step for zeta
    pin_constant_zeta: bool = False  # sigma2_zeta -> 0 limit: one common level, MH-updated
    fix_nu: float | None = None
    nu_grid: np.ndarray = field(default_factory=lambda: np.arange(2.5, 100.0 + 1e-9, 0.5))
    ar_prior_mean: tuple = (0.0, 0.0)       # (intercept, phi)
    ar_prior_var: tuple = (100.0, 1.0)
    sig2_zeta_prior: tuple = (2.5, 0.075)   # inverse-gamma (shape, scale)
    level_prior: tuple = (0.0, 100.0)       # normal (mean, var) on the pinned level
    outlier_prior_freq: float = 1.0 / 16.0  # prior outlier rate, ~1 per 4 years of quarters

    @classmethod
    def for_variant(cls, variant, **overrides):
        variant = normalize_variant(variant)
        if variant == "homoskedastic":
            return None
        flags = {
            "sv": dict(student_t=False, outliers=False),
            "sv_t": dict(student_t=True, outliers=False),
            "sv_outlier": dict(student_t=False, outliers=True),
            "sv_t_outlier": dict(student_t=True, outliers=True),
        }[variant]
        flags.update(overrides)
        return cls(**flags)

    def outlier_prior(self):
        # Beta(2, b) with mean equal to the prior outlier frequency
        a = 2.0
        b = a * (1.0 / self.outlier_prior_freq - 1.0)
        return a, b

    def outlier_grid(self):
        """Gauss-Legendre nodes/weights on (2, omega_bar); weights sum to the length."""
        x, w = np.polynomial.legendre.leggauss(self.n_grid)
        half = 0.5 * (self.omega_bar - 2.0)
        return half * x + 0.5 * (self.omega_bar + 2.0), half * w


@dataclass
class SVState:
    zeta: np.ndarray
    tau_t: np.ndarray
    omega_t: np.ndarray
    nu: float
    mu_zeta: float
    phi_zeta: float
    sigma2_zeta: float
    p_omega: float
    omega_bar: float
    accept_zeta: float = 0.0   # acceptance rate of the last log-volatility sweep

    @classmethod
    def initial(cls, T, cfg, var_y):
        level = math.log(max(var_y, 1e-12))
        return cls(
            zeta=np.full(T, level),
            tau_t=np.ones(T),
            omega_t=np.ones(T),
            nu=cfg.fix_nu if cfg.fix_nu is not None else 30.0,
            mu_zeta=level,
            phi_zeta=0.0 if cfg.pin_constant_zeta else 0.9,
            sigma2_zeta=0.05,
            p_omega=cfg.outlier_prior_freq,
            omega_bar=cfg.omega_bar,
        )

    def variances(self):
        v = self.tau_t * self.omega_t * np.exp(self.zeta)
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise FloatingPointError("non-positive or non-finite observation variance")
        return v


def _log_normal_pdf(u, var):
    return -0.5 * (LOG2PI + np.log(var) + u * u / var)


def step_mixture_scale(sv, residuals, rng, cfg):
    """tau_t | rest ~ IG((nu+1)/2, (nu + u_t^2 / (omega_t exp(zeta_t))) / 2)."""
    if not cfg.student_t:
        sv.tau_t = np.ones(residuals.size)
        return sv
    shape = 0.5 * (sv.nu + 1.0)
    rate = 0.5 * (sv.nu + residuals ** 2 / (sv.omega_t * np.exp(sv.zeta)))
    sv.tau_t = rate / rng.gamma(shape, 1.0, size=residuals.size)
    return sv


def step_log_volatility(sv, residuals, rng, cfg):
    """Single-site random-walk Metropolis on the log-volatility path.

    In the pinned-constant mode the whole path is one level, updated by a
    single Metropolis move against the summed likelihood; this realizes the
    sigma2_zeta -> 0 limit exactly.
    """
    u2_over_scale = residuals ** 2 / (sv.tau_t * sv.omega_t)
    if cfg.pin_constant_zeta:
        m0, v0 = cfg.level_prior
        cur = sv.mu_zeta
        prop = cur + cfg.mh_step * rng.standard_normal()
        delta = -0.5 * (np.sum(u2_over_scale) * (math.exp(-prop) - math.exp(-cur))
                        + residuals.size * (prop - cur))
        delta += -0.5 * ((prop - m0) ** 2 - (cur - m0) ** 2) / v0
        accepted = math.log(rng.random()) < delta
        if accepted:
            sv.mu_zeta = prop
        sv.zeta = np.full(residuals.size, sv.mu_zeta)
        sv.accept_zeta = float(accepted)
        return sv

    T = residuals.size
    mu, phi, s2 = sv.mu_zeta, sv.phi_zeta, sv.sigma2_zeta
    zeta = sv.zeta
    steps = cfg.mh_step * rng.standard_normal(T)
    logu = np.log(rng.random(T))
    n_acc = 0
    for t in range(T):
        cur = zeta[t]
        prop = cur + steps[t]
        delta = -0.5 * (u2_over_scale[t] * (math.exp(-prop) - math.exp(-cur)) + (prop - cur))
        if t == 0:
            # marginal of the first state is the stationary law
            delta += -0.5 * (1.0 - phi * phi) * ((prop - mu) ** 2 - (cur - mu) ** 2) / s2
        else:
            mean = mu + phi * (zeta[t - 1] - mu)
            delta += -0.5 * ((prop - mean) ** 2 - (cur - mean) ** 2) / s2
        if t < T - 1:
            delta += -0.5 * (((zeta[t + 1] - mu - phi * (prop - mu)) ** 2
                              - (zeta[t + 1] - mu - phi * (cur - mu)) ** 2) / s2)
        if logu[t] < delta:
            zeta[t] = prop
            n_acc += 1
    sv.accept_zeta = n_acc / T
    return sv


def outlier_log_odds(u, base_var, p_omega, nodes, weights, omega_bar):
    """log of (outlier branch weight / regular branch weight) for one residual.

    The outlier branch integrates the Gaussian likelihood against the
    uniform(2, omega_bar) prior on the variance multiplier; the integral is
    evaluated on the fixed Gauss-Legendre grid in log space.
    """
    log_reg = math.log1p(-p_omega) + _log_normal_pdf(u, base_var)
    comp = np.log(weights) + _log_normal_pdf(u, nodes * base_var)
    m = comp.max()
    log_int = m + np.log(np.exp(comp - m).sum()) - math.log(omega_bar - 2.0)
    log_out = math.log(p_omega) + log_int
    return log_out - log_reg


def step_outliers(sv, residuals, rng, cfg):
    """Two-part draw of omega_t: point mass at 1 versus the gridded outlier branch."""
    if not cfg.outliers:
        sv.omega_t = np.ones(residuals.size)
        return sv
    if sv.p_omega <= 0.0:
        sv.omega_t = np.ones(residuals.size)
        return sv
    nodes, weights = cfg.outlier_grid()
    base = sv.tau_t * np.exp(sv.zeta)
    logw = np.log(weights)
    omega = np.empty(residuals.size)
    for t in range(residuals.size):
        if sv.p_omega >= 1.0:
            take_outlier = True
        else:
            lo = outlier_log_odds(residuals[t], base[t], sv.p_omega, nodes, weights, sv.omega_bar)
            take_outlier = math.log(rng.random()) < lo - np.logaddexp(0.0, lo)
        if take_outlier:
            comp = logw + _log_normal_pdf(residuals[t], nodes * base[t])
            prob = np.exp(comp - comp.max())
            prob /= prob.sum()
            omega[t] = nodes[rng.choice(nodes.size, p=prob)]
        else:
            omega[t] = 1.0
    sv.omega_t = omega
    return sv


def _nu_loglik(nu_grid, tau_t):
    T = tau_t.size
    half = 0.5 * nu_grid
    return (T * (half * np.log(half) - gammaln(half))
            - (half + 1.0) * np.log(tau_t).sum()
            - half * (1.0 / tau_t).sum())


def step_sv_params(sv, rng, cfg):
    """Conjugate AR(1) updates for (mu, phi, sigma2) of the log-volatility,
    griddy-Gibbs for nu, Beta counting for the outlier probability."""
    T = sv.zeta.size
    if not cfg.pin_constant_zeta and T >= 3:
        a0, b0 = cfg.sig2_zeta_prior
        resid = sv.zeta[1:] - sv.mu_zeta - sv.phi_zeta * (sv.zeta[:-1] - sv.mu_zeta)
        sv.sigma2_zeta = (b0 + 0.5 * np.dot(resid, resid)) / rng.gamma(a0 + 0.5 * (T - 1), 1.0)

        X = np.column_stack([np.ones(T - 1), sv.zeta[:-1]])
        z = sv.zeta[1:]
        prior_prec = np.diag(1.0 / np.asarray(cfg.ar_prior_var))
        prec = prior_prec + X.T @ X / sv.sigma2_zeta
        cov = np.linalg.inv(prec)
        mean = cov @ (prior_prec @ np.asarray(cfg.ar_prior_mean) + X.T @ z / sv.sigma2_zeta)
        chol = np.linalg.cholesky(cov)
        for _ in range(100):
            c, phi = mean + chol @ rng.standard_normal(2)
            if abs(phi) < 1.0:
                sv.phi_zeta = phi
                sv.mu_zeta = c / (1.0 - phi)
                break
        # all proposals outside the stationary region -> keep the current values

    if cfg.student_t and cfg.fix_nu is None:
        ll = _nu_loglik(cfg.nu_grid, sv.tau_t)
        prob = np.exp(ll - ll.max())
        prob /= prob.sum()
        sv.nu = float(cfg.nu_grid[rng.choice(cfg.nu_grid.size, p=prob)])
    elif cfg.fix_nu is not None:
        sv.nu = float(cfg.fix_nu)

    if cfg.outliers:
        a_p, b_p = cfg.outlier_prior()
        n_out = int(np.sum(sv.omega_t > 1.0))
        sv.p_omega = rng.beta(a_p + n_out, b_p + T - n_out)
    return sv


def sv_sweep(sv, residuals, rng, cfg):
    """One full volatility block: scale mixture, log-volatility, outliers, parameters."""
    step_mixture_scale(sv, residuals, rng, cfg)
    step_log_volatility(sv, residuals, rng, cfg)
    step_outliers(sv, residuals, rng, cfg)
    step_sv_params(sv, rng, cfg)
    return sv


def one_step_ahead_variance(sv, rng, cfg):
    """Forecast-error variance for the next period.

    The log-volatility is pushed one step through its AR(1) law, the
    outlier multiplier is refreshed from its two-part prior, and the
    Student-t scale is marginalized into the nu/(nu-2) variance factor.
    """
    if cfg.pin_constant_zeta:
        zeta_next = sv.mu_zeta
    else:
        zeta_next = (sv.mu_zeta + sv.phi_zeta * (sv.zeta[-1] - sv.mu_zeta)
                     + math.sqrt(sv.sigma2_zeta) * rng.standard_normal())
    omega_next = 1.0
    if cfg.outliers and rng.random() < sv.p_omega:
        omega_next = rng.uniform(2.0, sv.omega_bar)
    factor = sv.nu / (sv.nu - 2.0) if cfg.student_t else 1.0
    return factor * omega_next * math.exp(zeta_next)

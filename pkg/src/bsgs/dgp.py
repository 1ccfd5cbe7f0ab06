"""Monte Carlo data generators for the grouped and mixed-frequency studies.

Two families: an AR(1)-in-the-target regression on grouped autocorrelated
predictors with Toeplitz innovation correlation, and a MIDAS regression
whose high-frequency weighting function is a three-parameter Beta shape.
Supports and signs of the active coefficients come from a dedicated seed
sub-stream so they stay fixed across replications while the noise varies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz, cholesky
from scipy.signal import lfilter
from scipy.special import gammaln

from .design import GroupedDesign, HighFreqSeries, assemble_midas_design, make_basis

BURN_IN = 500            # AR warm-up periods discarded after starting at the stationary mean
PILOT_LENGTH = 50_000    # path length used when calibrating the noise-to-signal ratio


class NoiseCalibrationError(RuntimeError):
    """Raised when no regressor scale can reach the requested noise-to-signal ratio."""


@dataclass
class SkewNormalSpec:
    """Skew-normal shock parameterized to have mean zero and variance sigma2."""

    alpha: float
    sigma2: float
    delta: float = field(init=False)
    omega2: float = field(init=False)
    xi: float = field(init=False)
    skewness: float = field(init=False)

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        a = self.alpha
        self.delta = a / np.sqrt(1.0 + a * a)
        d2 = self.delta ** 2
        self.omega2 = self.sigma2 * np.pi / (np.pi - 2.0 * d2)
        self.xi = -self.delta * np.sqrt(2.0 * self.omega2 / np.pi)
        self.skewness = ((4.0 - np.pi) / 2.0
                         * (self.delta * np.sqrt(2.0 / np.pi)) ** 3
                         / (1.0 - 2.0 * d2 / np.pi) ** 1.5)

    def draw(self, rng, size):
        u0 = np.abs(rng.standard_normal(size))
        u1 = rng.standard_normal(size)
        z = self.delta * u0 + np.sqrt(1.0 - self.delta ** 2) * u1
        return self.xi + np.sqrt(self.omega2) * z


def skew_normal_params(alpha, sigma2):
    return SkewNormalSpec(float(alpha), float(sigma2))


@dataclass
class GroupedDgpSpec:
    """Grouped-predictor design: N groups of g predictors, s0gr active groups
    with one active coefficient each (magnitude theta_mag, random sign)."""

    N: int
    g: int
    s0gr: int
    T: int = 200
    T_oos: int = 50
    rho_z: float = 0.9
    rho_eps: float = 0.5
    full_corr: bool = False
    nsr: float = 0.2
    alpha_const: float = 0.2
    beta_y: float = 0.3
    sigma: float = 0.5
    theta_mag: float = 0.5
    skew_alpha: float | None = None
    sigma_eps: float | None = None   # overrides NSR calibration when set
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.s0gr <= self.N:
            raise ValueError("need 1 <= s0gr <= N")
        if not (abs(self.rho_z) < 1 and abs(self.beta_y) < 1 and abs(self.rho_eps) < 1):
            raise ValueError("rho_z, rho_eps and beta_y must lie inside (-1, 1)")
        if self.T < 1 or self.T_oos < 0:
            raise ValueError("T must be >= 1 and T_oos >= 0")


@dataclass
class MidasDgpSpec:
    """Mixed-frequency design: N high-frequency predictors, s0gr active,
    each active one entering through the same Beta-shaped lag weights."""

    N: int
    s0gr: int
    T: int = 200
    T_oos: int = 50
    m: int = 3
    p_x: int = 11
    weight_params: tuple = (5.0, 15.0, 0.0)
    rho_x: float = 0.9
    rho_eps: float = 0.5
    alpha_const: float = 0.5
    beta_y: float = 0.3
    sigma: float = 0.5
    nsr: float = 0.2
    h: float = 0.0
    p_y: int = 1
    basis_family: str = "umidas"
    basis_g: int = 5
    sigma_eps: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.s0gr < 1:
            raise ValueError("s0gr must be >= 1 (at least one active high-frequency series)")
        if self.s0gr > self.N:
            raise ValueError("s0gr cannot exceed N")
        if not (abs(self.rho_x) < 1 and abs(self.beta_y) < 1 and abs(self.rho_eps) < 1):
            raise ValueError("rho_x, rho_eps and beta_y must lie inside (-1, 1)")
        if self.m < 1 or self.p_x < 0:
            raise ValueError("m must be >= 1 and p_x >= 0")


@dataclass
class DgpTruth:
    """What the generator actually used, for scoring estimators against."""

    theta0: np.ndarray        # aligned with the design columns (AR group last)
    group_support: np.ndarray  # bool per design group, AR group included
    var_support: np.ndarray    # bool per design column
    sigma_eps: float
    nsr_convention: str
    weights: np.ndarray | None = None   # MIDAS lag weights of the active series


def beta_lag_weights(a, b, c, p_x):
    """Three-parameter Beta lag weights on 0..p_x, thresholded and normalized.

    psi(u) = x^(a-1) (1-x)^(b-1) Gamma(a+b)/(Gamma(a)Gamma(b)) + c with
    x = (u+1)/(p_x+1); values below 1e-4 are set to exactly zero before
    normalizing the vector to unit sum.
    """
    if a <= 0 or b <= 0:
        raise ValueError("Beta shape parameters a, b must be positive")
    u = np.arange(p_x + 1, dtype=float)
    x = (u + 1.0) / (p_x + 1.0)
    with np.errstate(divide="ignore"):
        # unit exponents contribute exactly zero, even at the interval ends
        t_a = np.zeros_like(x) if a == 1.0 else (a - 1.0) * np.log(x)
        t_b = np.zeros_like(x) if b == 1.0 else (b - 1.0) * np.log1p(-x)
    logbeta = t_a + t_b + gammaln(a + b) - gammaln(a) - gammaln(b)
    psi = np.where(np.isneginf(logbeta), 0.0, np.exp(logbeta)) + c
    if not np.all(np.isfinite(psi)):
        raise ValueError("weight function diverges at the lag-grid endpoint (b < 1)")
    psi[psi < 1e-4] = 0.0
    total = psi.sum()
    if total <= 0:
        raise ValueError("all lag weights fell below the 1e-4 threshold")
    return psi / total


def toeplitz_block_cov(N, g, rho_eps, sigma_eps, full=False):
    """Innovation covariance S R S with Toeplitz correlation rho^|i-i'|.

    Block-diagonal over the N groups by default; `full` extends the same
    Toeplitz profile across the whole Ng x Ng matrix (between-group
    correlation).
    """
    if not abs(rho_eps) < 1:
        raise ValueError("|rho_eps| must be < 1")
    if sigma_eps <= 0:
        raise ValueError("sigma_eps must be positive")
    if full:
        corr = toeplitz(rho_eps ** np.arange(N * g))
    else:
        block = toeplitz(rho_eps ** np.arange(g))
        corr = np.kron(np.eye(N), block)
    return sigma_eps ** 2 * corr


def _ar1_path(innovations, rho):
    # start at the stationary mean (zero); callers discard BURN_IN periods
    return lfilter([1.0], [1.0, -rho], innovations, axis=0)


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def _grouped_supports(spec):
    rng = _rng(spec.seed, 101)
    groups = np.sort(rng.choice(spec.N, size=spec.s0gr, replace=False))
    within = rng.integers(0, spec.g, size=spec.s0gr)
    signs = rng.choice([-1.0, 1.0], size=spec.s0gr, replace=True)
    return groups, within, signs


def _grouped_theta(spec):
    theta = np.zeros(spec.N * spec.g)
    groups, within, signs = _grouped_supports(spec)
    theta[groups * spec.g + within] = signs * spec.theta_mag
    return theta


def _shock_drawer(spec):
    if getattr(spec, "skew_alpha", None) is not None:
        sn = skew_normal_params(spec.skew_alpha, spec.sigma ** 2)
        return lambda rng, size: sn.draw(rng, size)
    return lambda rng, size: spec.sigma * rng.standard_normal(size)


NSR_CONVENTION = "var(shock) / var(beta_y * y_lag + regressor signal), intercept excluded"


def _nsr_on_path(unit_signal, shocks, spec):
    """Empirical NSR as a function of the regressor scale, on a fixed pilot.

    The regressor-driven part of the conditional mean is linear in
    sigma_eps, so one unit-scale pilot path supports the whole bisection.
    """
    def nsr(sigma_eps):
        s = sigma_eps * unit_signal
        y = _ar1_path(spec.alpha_const + s + shocks, spec.beta_y)
        signal = spec.beta_y * np.concatenate(([0.0], y[:-1])) + s
        signal = signal[BURN_IN:]
        v = np.var(signal)
        if v == 0:
            return np.inf
        return np.var(shocks[BURN_IN:]) / v
    return nsr


def calibrate_noise(spec, pilot_length=PILOT_LENGTH):
    """Bisect the regressor innovation scale until the pilot NSR hits spec.nsr.

    The pilot path is deterministic given the spec seed.  Raises
    NoiseCalibrationError with the bracket endpoints when the target is
    unreachable (e.g. no regressor signal at all).
    """
    rng = _rng(spec.seed, 202)
    n = pilot_length + BURN_IN
    if isinstance(spec, GroupedDgpSpec):
        theta = _grouped_theta(spec)
        active = np.flatnonzero(theta)
        if active.size:
            cov = toeplitz_block_cov(spec.N, spec.g, spec.rho_eps, 1.0, full=spec.full_corr)
            sub = cov[np.ix_(active, active)]
            innov = rng.standard_normal((n, active.size)) @ cholesky(sub, lower=False)
            unit_signal = _ar1_path(innov, spec.rho_z) @ theta[active]
        else:
            unit_signal = np.zeros(n)
    elif isinstance(spec, MidasDgpSpec):
        psi = beta_lag_weights(*spec.weight_params, spec.p_x)
        active = np.arange(spec.s0gr)   # correlation profile is exchangeable up to relabeling
        corr = toeplitz(spec.rho_eps ** np.arange(spec.N))
        sub = corr[np.ix_(active, active)]
        innov = rng.standard_normal((n * spec.m, active.size)) @ cholesky(sub, lower=False)
        x = _ar1_path(innov, spec.rho_x)
        conv = np.apply_along_axis(lambda col: np.convolve(col, psi), 0, x)
        idx = spec.m * np.arange(1, n + 1) - 1 - int(round(spec.m * spec.h))
        valid = idx >= spec.p_x
        unit_signal = np.zeros(n)
        unit_signal[valid] = conv[idx[valid]].sum(axis=1)
    else:
        raise TypeError(f"unsupported spec type {type(spec).__name__}")

    shocks = _shock_drawer(spec)(rng, n)
    nsr = _nsr_on_path(unit_signal, shocks, spec)
    target = spec.nsr
    if target <= 0:
        raise ValueError("target NSR must be positive")

    lo, hi = 1e-9, 1.0
    f_lo, f_hi = nsr(lo), nsr(hi)
    tries = 0
    while f_hi > target and tries < 80:
        hi *= 2.0
        f_hi = nsr(hi)
        tries += 1
    if not (f_lo > target > f_hi):
        raise NoiseCalibrationError(
            f"cannot bracket NSR={target}: NSR({lo:g})={f_lo:.6g}, NSR({hi:g})={f_hi:.6g};"
            " the regressor signal may be degenerate")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = nsr(mid)
        if abs(f_mid - target) <= 0.01 * target:
            return mid
        if f_mid > target:
            lo = mid
        else:
            hi = mid
    raise NoiseCalibrationError(f"bisection failed to reach NSR={target} within tolerance")


def simulate_grouped(spec, rep=0, sigma_eps=None):
    """Simulate one grouped-predictor replication.

    Returns (in-sample GroupedDesign, out-of-sample GroupedDesign, DgpTruth).
    The AR(1) lag of y is appended as a final always-active single-column
    group, so the design has N + 1 groups.
    """
    if sigma_eps is None:
        sigma_eps = spec.sigma_eps if spec.sigma_eps is not None else calibrate_noise(spec)
    theta = _grouped_theta(spec)
    rng = _rng(spec.seed, 303, rep)
    n = BURN_IN + spec.T + spec.T_oos

    cov = toeplitz_block_cov(spec.N, spec.g, spec.rho_eps, sigma_eps, full=spec.full_corr)
    innov = rng.standard_normal((n, spec.N * spec.g)) @ cholesky(cov, lower=False)
    z = _ar1_path(innov, spec.rho_z)
    shocks = _shock_drawer(spec)(rng, n)
    y = _ar1_path(spec.alpha_const + z @ theta + shocks, spec.beta_y)

    idx = np.arange(BURN_IN, n)
    Z = np.hstack([z[idx], y[idx - 1][:, None]])
    y_kept = y[idx]

    partition = (spec.g,) * spec.N + (1,)
    labels = tuple(f"group{j + 1}" for j in range(spec.N)) + ("y_lags",)
    theta0 = np.concatenate([theta, [spec.beta_y]])
    truth = DgpTruth(
        theta0=theta0,
        group_support=np.array([np.any(theta[j * spec.g:(j + 1) * spec.g] != 0)
                                for j in range(spec.N)] + [True]),
        var_support=theta0 != 0,
        sigma_eps=sigma_eps,
        nsr_convention=NSR_CONVENTION,
    )
    design_in = GroupedDesign(y_kept[:spec.T], Z[:spec.T], partition, labels)
    design_oos = None
    if spec.T_oos:
        design_oos = GroupedDesign(y_kept[spec.T:], Z[spec.T:], partition, labels)
    return design_in, design_oos, truth


def simulate_midas(spec, rep=0, sigma_eps=None, basis=None):
    """Simulate one mixed-frequency replication.

    Returns (panel, in-sample GroupedDesign, out-of-sample GroupedDesign,
    DgpTruth) where the panel is (y array, list of HighFreqSeries).  The
    design is assembled through the basis named in the spec (or the one
    passed explicitly); the target path itself is built by direct
    convolution of the Beta weights with the high-frequency paths.
    """
    if sigma_eps is None:
        sigma_eps = spec.sigma_eps if spec.sigma_eps is not None else calibrate_noise(spec)
    psi = beta_lag_weights(*spec.weight_params, spec.p_x)
    support_rng = _rng(spec.seed, 101)
    active = np.sort(support_rng.choice(spec.N, size=spec.s0gr, replace=False))

    rng = _rng(spec.seed, 303, rep)
    n_lf = BURN_IN + spec.T + spec.T_oos
    n_hf = n_lf * spec.m
    corr = toeplitz(spec.rho_eps ** np.arange(spec.N))
    innov = sigma_eps * (rng.standard_normal((n_hf, spec.N)) @ cholesky(corr, lower=False))
    x = _ar1_path(innov, spec.rho_x)

    h_sub = int(round(spec.m * spec.h))
    if abs(h_sub - spec.m * spec.h) > 1e-9:
        raise ValueError(f"horizon {spec.h} is not a multiple of 1/{spec.m}")
    signal = np.zeros(n_lf)
    idx = spec.m * np.arange(1, n_lf + 1) - 1 - h_sub
    for j in active:
        conv = np.convolve(x[:, j], psi)
        valid = idx >= spec.p_x   # before that the lag window leaves the sample
        signal[valid] += conv[idx[valid]]
    shocks = spec.sigma * rng.standard_normal(n_lf)
    y = _ar1_path(spec.alpha_const + signal + shocks, spec.beta_y)

    series = [HighFreqSeries(f"x{j + 1}", x[:, j], spec.m) for j in range(spec.N)]
    if basis is None:
        basis = make_basis(spec.basis_family, spec.basis_g, spec.p_x)
    design_full = assemble_midas_design(y, series, basis, h=spec.h, p_y=spec.p_y)

    n_keep = spec.T + spec.T_oos
    if design_full.T < n_keep:
        raise ValueError("simulated sample shorter than T + T_oos after alignment")
    tail = slice(design_full.T - n_keep, None)
    y_tail, Z_tail = design_full.y[tail], design_full.Z[tail]
    kwargs = dict(partition=design_full.partition, group_labels=design_full.group_labels,
                  horizon=spec.h, basis_meta=design_full.basis_meta)
    design_in = GroupedDesign(y_tail[:spec.T], Z_tail[:spec.T], **kwargs)
    design_oos = None
    if spec.T_oos:
        design_oos = GroupedDesign(y_tail[spec.T:], Z_tail[spec.T:], **kwargs)

    group_support = np.zeros(design_full.n_groups, dtype=bool)
    group_support[active] = True
    group_support[-1] = True   # AR group
    var_support = np.zeros(design_full.width, dtype=bool)
    for j, (s, e) in enumerate(design_in.group_bounds()):
        if group_support[j]:
            var_support[s:e] = True
    truth = DgpTruth(
        theta0=np.array([]),   # coefficients live in weight space, see `weights`
        group_support=group_support,
        var_support=var_support,
        sigma_eps=sigma_eps,
        nsr_convention=NSR_CONVENTION,
        weights=psi,
    )
    return (y, series), design_in, design_oos, truth

"""Estimation, selection and density-forecast metrics, pooling, and the
bi-level sparse singular value diagnostic.

Forecast densities are Gaussian mixtures (one component per posterior
draw); the log score evaluates the mixture exactly and the CRPS uses the
closed-form Gaussian kernel representation with the pairwise-difference
correction.  The optimal pool maximizes the historical sum of log pooled
densities over the simplex by projected gradient ascent.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import ndtr

from .sampler import ForecastDensity

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass
class SelectionReport:
    tpr_group: float
    tpr_var: float
    mcc_group: float
    mcc_var: float
    confusion_group: dict
    confusion_var: dict


@dataclass
class ScoreReport:
    rmsfe: float
    avg_logs: float
    avg_crps: float
    rel_rmsfe: float | None = None
    rel_logs: float | None = None     # difference vs the benchmark (higher is better)
    rel_crps: float | None = None
    n_periods: int = 0


def estimation_metrics(theta_hat_per_rep, theta0):
    """Squared-error decomposition of a point estimator across replications.

    MSE is the mean over replications of the squared error norm; VAR sums
    the per-coordinate sample variances and BIAS2 the squared bias norm,
    everything normalized by the replication count R so that
    MSE = VAR + BIAS2 holds exactly.
    """
    est = np.atleast_2d(np.asarray(theta_hat_per_rep, dtype=float))
    theta0 = np.asarray(theta0, dtype=float).ravel()
    if est.shape[1] != theta0.size:
        raise ValueError(f"estimates have {est.shape[1]} coordinates, truth has {theta0.size}")
    err = est - theta0
    mse = float(np.mean(np.sum(err ** 2, axis=1)))
    center = est.mean(axis=0)
    var = float(np.sum(np.mean((est - center) ** 2, axis=0)))
    bias2 = float(np.sum((center - theta0) ** 2))
    return mse, var, bias2


def _confusion(declared, truth):
    declared = np.asarray(declared, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    return {
        "TP": int(np.sum(declared & truth)),
        "FP": int(np.sum(declared & ~truth)),
        "FN": int(np.sum(~declared & truth)),
        "TN": int(np.sum(~declared & ~truth)),
    }


def tpr(conf):
    denom = conf["TP"] + conf["FN"]
    return 100.0 * conf["TP"] / denom if denom else 100.0


def mcc(conf):
    tp, fp, fn, tn = conf["TP"], conf["FP"], conf["FN"], conf["TN"]
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def selection_metrics(group_freq, var_freq, truth_group, truth_var, threshold=0.5):
    """Support-recovery quality at both levels under the median-probability rule.

    A group or coefficient counts as declared active when its posterior
    inclusion frequency reaches the threshold (default 0.5).
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    cg = _confusion(np.asarray(group_freq) >= threshold, truth_group)
    cv = _confusion(np.asarray(var_freq) >= threshold, truth_var)
    return SelectionReport(tpr(cg), tpr(cv), mcc(cg), mcc(cv), cg, cv)


def _abs_moment(mean, var):
    """E|X| for X ~ N(mean, var), vectorized."""
    sd = np.sqrt(var)
    z = mean / sd
    return mean * (2.0 * ndtr(z) - 1.0) + 2.0 * sd * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def crps_gaussian_mixture(density, y, chunk=2048):
    """Closed-form CRPS of an equally weighted Gaussian mixture at outcome y.

    CRPS(F, y) = E|X - y| - 0.5 E|X - X'| with both expectations available
    per Gaussian component pair.
    """
    mu, var, w = density.means, density.variances, density.weights
    term1 = float(w @ _abs_moment(y - mu, var))
    term2 = 0.0
    n = mu.size
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        dm = mu[start:stop, None] - mu[None, :]
        dv = var[start:stop, None] + var[None, :]
        term2 += float(w[start:stop] @ _abs_moment(dm, dv) @ w)
    return term1 - 0.5 * term2


def crps_empirical(draws, y):
    """Sample-based CRPS estimator E|X-y| - 0.5 E|X-X'| from draws of X."""
    draws = np.sort(np.asarray(draws, dtype=float))
    n = draws.size
    term1 = np.abs(draws - y).mean()
    # E|X-X'| for a sorted sample via the rank identity
    ranks = np.arange(1, n + 1)
    term2 = 2.0 * np.sum((2.0 * ranks - n - 1.0) * draws) / (n * n)
    return term1 - 0.5 * term2


def forecast_scores(densities, outcomes, benchmark=None):
    """RMSFE, average log score and average CRPS of a density sequence.

    With a benchmark sequence present, relative RMSFE and CRPS are ratios
    (model over benchmark) while the log score is reported as a difference,
    so 0 marks benchmark parity for LogS and 1 for the other two.
    """
    outcomes = np.asarray(outcomes, dtype=float).ravel()
    densities = list(densities)
    if len(densities) != outcomes.size:
        raise ValueError("one density per outcome required")
    sq_err = np.empty(outcomes.size)
    logs = np.empty(outcomes.size)
    crps = np.empty(outcomes.size)
    for t, (d, y) in enumerate(zip(densities, outcomes)):
        sq_err[t] = (d.mean() - y) ** 2
        logs[t] = d.logpdf(y)
        if not math.isfinite(logs[t]):
            warnings.warn(f"zero predictive density at outcome index {t}; log score is -inf")
        crps[t] = crps_gaussian_mixture(d, y)
    report = ScoreReport(
        rmsfe=float(np.sqrt(sq_err.mean())),
        avg_logs=float(logs.mean()),
        avg_crps=float(crps.mean()),
        n_periods=outcomes.size,
    )
    if benchmark is not None:
        bench = forecast_scores(benchmark, outcomes)
        report.rel_rmsfe = report.rmsfe / bench.rmsfe
        report.rel_logs = report.avg_logs - bench.avg_logs
        report.rel_crps = report.avg_crps / bench.avg_crps
    return report


def fit_ar1(y):
    """Least-squares AR(1) with intercept; returns (const, slope, resid_var)."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 10:
        raise ValueError("need at least 10 observations to fit the benchmark")
    X = np.column_stack([np.ones(y.size - 1), y[:-1]])
    coef, *_ = np.linalg.lstsq(X, y[1:], rcond=None)
    resid = y[1:] - X @ coef
    dof = y.size - 1 - 2
    s2 = float(resid @ resid) / dof
    floor = 1e-12 * max(float(np.var(y)), 1e-12)
    if s2 <= floor or not math.isfinite(s2):
        raise ValueError("degenerate response: zero residual variance in the AR(1) benchmark")
    return float(coef[0]), float(coef[1]), s2


def ar1_benchmark(y_train, n_ahead=1):
    """Gaussian predictive densities of a least-squares AR(1) with intercept.

    Plug-in variance; direct iteration for horizons beyond one (the mean
    iterates the fitted recursion, the variance accumulates the moving
    average weights).  Returns one ForecastDensity per horizon 1..n_ahead,
    or a single density when n_ahead == 1.
    """
    c, phi, s2 = fit_ar1(y_train)
    y_last = float(np.asarray(y_train).ravel()[-1])
    out = []
    mean = y_last
    var = 0.0
    for h in range(1, n_ahead + 1):
        mean = c + phi * mean
        var = s2 + phi * phi * var
        out.append(ForecastDensity(np.array([mean]), np.array([var]), np.array([1.0])))
    return out[0] if n_ahead == 1 else out


def ar1_oos_densities(y_full, train_len):
    """One-step AR(1) predictives over an out-of-sample stretch.

    The model is fit once on the first train_len observations; each
    out-of-sample period is predicted from its realized lag, mirroring a
    design whose autoregressive column holds realized values.
    """
    y = np.asarray(y_full, dtype=float).ravel()
    c, phi, s2 = fit_ar1(y[:train_len])
    return [ForecastDensity(np.array([c + phi * y[t - 1]]), np.array([s2]), np.array([1.0]))
            for t in range(train_len, y.size)]


def _project_simplex(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, v.size + 1) > css - 1.0)[0][-1]
    tau = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def optimal_pool(log_scores, tol=1e-8, max_iter=20_000):
    """Log-score-optimal pooling weights over the simplex.

    log_scores is (n_models, n_periods) of log predictive densities at the
    realized outcomes.  The objective sum_t log(sum_k w_k f_kt) is concave;
    projected gradient ascent with backtracking reaches the global optimum,
    stopping when the projected-gradient norm falls below tol.
    """
    L = np.atleast_2d(np.asarray(log_scores, dtype=float))
    K, T = L.shape
    if T < 1:
        raise ValueError("need at least one evaluation period")
    if not np.all(np.isfinite(L)):
        raise ValueError("log predictive densities must be finite")
    if K == 1:
        return np.array([1.0])
    M = L.max(axis=0)
    F = np.exp(L - M)    # per-period rescaling cancels in the weights

    def objective(w):
        mix = w @ F
        if np.any(mix <= 0):
            return -np.inf
        return float(np.log(mix).sum())

    def gradient(w):
        return F @ (1.0 / (w @ F))

    def pg_norm_at(w):
        return float(np.linalg.norm(_project_simplex(w + gradient(w)) - w))

    w = np.full(K, 1.0 / K)
    obj = objective(w)
    gamma = 1.0 / T
    for _ in range(max_iter):
        g = gradient(w)
        if pg_norm_at(w) < tol:
            break
        gamma = min(gamma * 2.0, 1e6)   # warm-started backtracking line search
        moved = False
        for _ in range(80):
            cand = _project_simplex(w + gamma * g)
            cand_obj = objective(cand)
            if cand_obj >= obj:
                moved = True
                break
            gamma *= 0.5
        if not moved:
            break   # objective at floating-point resolution; hand over to the polish
        w, obj = cand, cand_obj
    # fixed-point polish: w_k <- w_k * g_k / sum(w g) is a monotone MM step for this
    # objective and needs no objective comparisons, so it is immune to the
    # resolution stall.  Boundary optima are only approached geometrically by
    # the multiplicative step, so weights that have decayed to dust are
    # snapped to zero whenever that does not hurt the objective.
    for _ in range(8):
        for _ in range(2000):
            if pg_norm_at(w) < tol:
                break
            g = gradient(w)
            w = w * g
            w = np.maximum(w, 0.0)
            w /= w.sum()
        if pg_norm_at(w) < tol:
            break
        tiny = (w > 0) & (w < 1e-5)
        if not tiny.any():
            continue
        snapped = np.where(tiny, 0.0, w)
        snapped /= snapped.sum()
        if objective(snapped) >= objective(w) - 1e-9 * abs(objective(w)):
            w = snapped
    pg = pg_norm_at(w)
    if pg >= tol:
        raise RuntimeError(f"pool weights did not converge: projected-gradient norm {pg:.3e}")
    return w / w.sum()


def pool_density(densities, weights):
    """Convex combination of Gaussian-mixture densities as one mixture."""
    means = np.concatenate([d.means for d in densities])
    variances = np.concatenate([d.variances for d in densities])
    w = np.concatenate([wk * d.weights for d, wk in zip(densities, weights)])
    keep = w > 0
    if not np.any(keep):
        raise ValueError("pool has no mass")
    w = w[keep] / w[keep].sum()
    return ForecastDensity(means[keep], variances[keep], w)


def block_operator_norm(Z, partition):
    """Largest per-group operator norm of the column blocks of Z."""
    ends = np.cumsum(partition)
    starts = ends - np.asarray(partition)
    return max(np.linalg.svd(Z[:, s:e], compute_uv=False)[0] for s, e in zip(starts, ends))


def bilevel_sparse_singular_value(Z, partition, s, r, max_supports=300_000):
    """Smallest scaled bi-level sparse singular value by exact enumeration.

    Minimizes lambda_min(Z_E' Z_E) / max_j ||Z_j||_op^2 over column
    supports E touching at most s groups and at most r columns.  Because
    lambda_min only falls as a support grows, it suffices to scan maximal
    supports: every s-subset of groups and every r-subset of its columns.
    Guarded to small instances (N <= 12, at most 24 columns).
    """
    Z = np.asarray(Z, dtype=float)
    partition = tuple(int(g) for g in partition)
    N = len(partition)
    P = sum(partition)
    if Z.shape[1] != P:
        raise ValueError("partition does not match the column count")
    if N > 12 or P > 24:
        raise ValueError(f"instance too large for exact enumeration (N={N}, columns={P})")
    s = int(s)
    r = int(r)
    if s < 1 or r < 1:
        raise ValueError("need s >= 1 and r >= 1")
    ends = np.cumsum(partition)
    starts = ends - np.asarray(partition)
    cols_of = [list(range(a, b)) for a, b in zip(starts, ends)]
    norm_sq = block_operator_norm(Z, partition) ** 2
    if norm_sq == 0:
        raise ValueError("zero design matrix")

    s_eff = min(s, N)
    total = 0
    for J in combinations(range(N), s_eff):
        cols = [c for j in J for c in cols_of[j]]
        total += math.comb(len(cols), min(r, len(cols)))
        if total > max_supports:
            raise ValueError("instance too large for exact enumeration (support count)")

    gram = Z.T @ Z
    best = np.inf
    for J in combinations(range(N), s_eff):
        cols = [c for j in J for c in cols_of[j]]
        r_eff = min(r, len(cols))
        for E in combinations(cols, r_eff):
            sub = gram[np.ix_(E, E)]
            lam = np.linalg.eigvalsh(sub)[0]
            if lam < best:
                best = lam
    return float(max(best, 0.0) / norm_sq)

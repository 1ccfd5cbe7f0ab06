"""Study orchestration: Monte Carlo cells and rolling-window nowcasting.

A simulation study runs one data-generating cell for a number of
replications (simulate, optionally tune, sample, score) and aggregates the
estimation/selection/forecast metrics with bootstrap standard errors.  The
rolling nowcast re-estimates a menu of models (basis x volatility x
partition) at every origin, scores them against an AR(1) benchmark, and
combines them through log-score-optimal pools trained on past
out-of-sample periods.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .design import assemble_midas_design, make_basis
from .dgp import GroupedDgpSpec, MidasDgpSpec, calibrate_noise, simulate_grouped, simulate_midas
from .evaluation import (ar1_oos_densities, estimation_metrics, fit_ar1, forecast_scores,
                         optimal_pool, pool_density, selection_metrics)
from .sampler import ForecastDensity, McmcSettings, posterior_predictive, run_chain
from .tuning import GridSpec, c_lower_bounds, default_hyperparams, select_c

BOOTSTRAP_RESAMPLES = 1000


def _chain_seed(base_seed, *key):
    return int(np.random.SeedSequence([int(base_seed), *map(int, key)]).generate_state(1)[0])


def build_prior(prior_cfg, N, T, g, s0gr_guess=None):
    """Prior template from a config block.

    Explicit c0/c1 win; otherwise they sit at the analytic lower bounds for
    the supplied (or guessed) group sparsity.
    """
    prior_cfg = dict(prior_cfg or {})
    template = default_hyperparams(N, T, g)
    bounds_cfg = prior_cfg.pop("bounds", {}) or {}
    c0 = prior_cfg.pop("c0", None)
    c1 = prior_cfg.pop("c1", None)
    if c0 is None or c1 is None:
        c0_min, c1_min = c_lower_bounds(
            N, g,
            s0gr_guess=bounds_cfg.get("s0gr_guess", s0gr_guess),
            u0=bounds_cfg.get("u0", 1.0), u1=bounds_cfg.get("u1", 1.0),
            k0=bounds_cfg.get("k0", 1.0), k1=bounds_cfg.get("k1", 1.0))
        c0 = c0 if c0 is not None else max(c0_min, 1.0)
        c1 = c1 if c1 is not None else max(c1_min, 1.0)
    allowed = {"group_specific_pi1", "hierarchical_a1", "d0", "d1", "a0", "a1", "e0", "e1"}
    extra = {k: v for k, v in prior_cfg.items() if k in allowed}
    unknown = set(prior_cfg) - allowed
    if unknown:
        raise ValueError(f"unknown prior settings: {sorted(unknown)}")
    return replace(template, c0=float(c0), c1=float(c1), **extra)


def _bootstrap_se(values, seed):
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        return None
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.shape[0], size=(BOOTSTRAP_RESAMPLES, values.shape[0]))
    return float(np.std(values[idx].mean(axis=1), ddof=1))


def make_dgp_spec(dgp_cfg, seed):
    cfg = dict(dgp_cfg)
    kind = cfg.pop("kind")
    cfg.setdefault("seed", seed)
    if kind == "grouped":
        return GroupedDgpSpec(**cfg)
    if kind == "midas":
        if "weight_params" in cfg:
            cfg["weight_params"] = tuple(cfg["weight_params"])
        return MidasDgpSpec(**cfg)
    raise ValueError(f"unknown dgp kind {kind!r}")


def _implied_weights(theta, design, psi_len):
    """Map basis coefficients to lag-weight space, one vector per series group."""
    out = []
    for j, (s, e) in enumerate(design.group_bounds()):
        label = design.group_labels[j]
        if design.basis_meta and label in design.basis_meta:
            basis = design.basis_meta[label]
            out.append(basis.values.T @ theta[s:e])
        elif label != "y_lags":
            out.append(np.zeros(psi_len))
    return np.concatenate(out)


def run_replication(spec, prior, mcmc, rep, volatility="homoskedastic", sigma_eps=None,
                    selection_threshold=0.5, center=True):
    """One simulate->sample->score pass; returns a flat metric record."""
    if isinstance(spec, GroupedDgpSpec):
        d_in, d_oos, truth = simulate_grouped(spec, rep=rep, sigma_eps=sigma_eps)
    else:
        _, d_in, d_oos, truth = simulate_midas(spec, rep=rep, sigma_eps=sigma_eps)
    seed = _chain_seed(mcmc.seed, rep)
    fit_design = d_in.centered() if center else d_in
    chain = run_chain(fit_design, prior, replace(mcmc, seed=seed), volatility=volatility)
    theta_hat = np.median(chain.theta_draws, axis=0)

    n_exog = d_in.n_groups - 1      # the appended AR group is active by construction
    exog_cols = slice(0, d_in.group_bounds()[n_exog][0])
    sel = selection_metrics(chain.inclusion_group[:n_exog], chain.inclusion_within[exog_cols],
                            truth.group_support[:n_exog], truth.var_support[exog_cols],
                            threshold=selection_threshold)
    if isinstance(spec, GroupedDgpSpec):
        est_vec = theta_hat[exog_cols]
        true_vec = truth.theta0[exog_cols]
    else:
        psi_len = truth.weights.size
        est_vec = _implied_weights(theta_hat, d_in, psi_len)
        true_vec = np.concatenate([truth.weights if truth.group_support[j] else
                                   np.zeros(psi_len) for j in range(n_exog)])

    record = {
        "rep": rep, "chain_seed": seed,
        "theta_hat": est_vec, "theta_true": true_vec,
        "tpr_group": sel.tpr_group, "tpr_var": sel.tpr_var,
        "mcc_group": sel.mcc_group, "mcc_var": sel.mcc_var,
    }
    if d_oos is not None and d_oos.T >= 2:
        fds = posterior_predictive(chain, d_oos.Z)
        y_full = np.concatenate([d_in.y, d_oos.y])
        bench = ar1_oos_densities(y_full, d_in.T)
        scores = forecast_scores(fds, d_oos.y, benchmark=bench)
        record.update(rmsfe=scores.rmsfe, logs=scores.avg_logs, crps=scores.avg_crps,
                      rel_rmsfe=scores.rel_rmsfe, rel_logs=scores.rel_logs,
                      rel_crps=scores.rel_crps)
    return record


def run_simulation_study(dgp_cfg, mcmc_cfg, prior_cfg=None, replications=10, seed=0,
                         volatility="homoskedastic", tune_cfg=None, n_jobs=1,
                         selection_threshold=0.5, center=True):
    """One Monte Carlo cell; returns {"table", "per_rep", "manifest"}.

    The cell table mirrors the study layout: estimation error decomposition
    of the posterior median, TPR/MCC at group and variable level, and
    forecast scores relative to the AR(1) benchmark, with bootstrap
    standard errors over replications (absent when replications == 1).
    Failed replications are recorded in the manifest and skipped.
    """
    spec = make_dgp_spec(dgp_cfg, seed)
    sigma_eps = spec.sigma_eps if spec.sigma_eps is not None else calibrate_noise(spec)
    if isinstance(spec, GroupedDgpSpec):
        N_exog, g = spec.N, spec.g
    else:
        N_exog = spec.N
        g = make_basis(spec.basis_family, spec.basis_g, spec.p_x).g
    prior = build_prior(prior_cfg, N_exog, spec.T, g, s0gr_guess=spec.s0gr)
    mcmc = McmcSettings(**mcmc_cfg)

    manifest = {"dgp": dict(dgp_cfg), "sigma_eps": sigma_eps, "seed": seed, "center": center,
                "volatility": volatility, "replications": replications,
                "mcmc": dict(mcmc_cfg), "reps": [], "failures": []}
    if tune_cfg:
        if isinstance(spec, GroupedDgpSpec):
            d0_in, _, _ = simulate_grouped(spec, rep=0, sigma_eps=sigma_eps)
        else:
            _, d0_in, _, _ = simulate_midas(spec, rep=0, sigma_eps=sigma_eps)
        grid = GridSpec(tuple(tune_cfg["c0_range"]), tuple(tune_cfg["c1_range"]),
                        points=int(tune_cfg.get("points", 10)),
                        seed=int(tune_cfg.get("seed", seed)))
        short = McmcSettings(int(tune_cfg.get("sweeps", 10_000)),
                             int(tune_cfg.get("burn_in", 2_000)),
                             thin=int(tune_cfg.get("thin", 5)), seed=grid.seed)
        template = replace(prior, c0=None, c1=None)
        d0_fit = d0_in.centered() if center else d0_in
        c0, c1, dic_table = select_c(d0_fit, template, grid, short, n_jobs=n_jobs)
        prior = replace(prior, c0=c0, c1=c1)
        manifest["tuned"] = {"c0": c0, "c1": c1}
        manifest["dic_table"] = dic_table
    manifest["prior"] = {"c0": prior.c0, "c1": prior.c1}

    def one(rep):
        try:
            return run_replication(spec, prior, mcmc, rep, volatility=volatility,
                                   sigma_eps=sigma_eps, center=center,
                                   selection_threshold=selection_threshold)
        except Exception as exc:
            return {"rep": rep, "error": f"{type(exc).__name__}: {exc}"}

    records = Parallel(n_jobs=n_jobs)(delayed(one)(rep) for rep in range(replications))
    good = [r for r in records if "error" not in r]
    manifest["failures"] = [{"rep": r["rep"], "error": r["error"]}
                            for r in records if "error" in r]
    manifest["reps"] = [{"rep": r["rep"], "chain_seed": r["chain_seed"]} for r in good]
    if not good:
        raise RuntimeError(f"every replication failed: {manifest['failures']}")

    est = np.vstack([r["theta_hat"] for r in good])
    mse, var, bias2 = estimation_metrics(est, good[0]["theta_true"])
    row = {"replications": len(good), "mse": mse, "var": var, "bias2": bias2}
    per_rep_cols = {}
    metric_names = ("tpr_group", "tpr_var", "mcc_group", "mcc_var",
                    "rel_rmsfe", "rel_logs", "rel_crps", "rmsfe", "logs", "crps")
    for pos, key in enumerate(metric_names):
        vals = np.array([r[key] for r in good if key in r], dtype=float)
        if vals.size == 0:
            continue
        per_rep_cols[key] = vals
        row[key] = float(vals.mean())
        row[f"{key}_se"] = _bootstrap_se(vals, _chain_seed(seed, 0xB0075, pos))
    per_rep = pd.DataFrame({"rep": [r["rep"] for r in good], **{
        k: v for k, v in per_rep_cols.items()}})
    table = pd.DataFrame([row])
    return {"table": table, "per_rep": per_rep, "manifest": manifest}


# -- rolling nowcast ---------------------------------------------------------


def _parse_basis_spec(text):
    """'restricted_almon:3' -> (family, g, restricted)."""
    parts = str(text).split(":")
    family = parts[0].strip().lower().replace("-", "_")
    g = int(parts[1]) if len(parts) > 1 else (3 if family == "restricted_almon" else 5)
    return family, g


def _parse_horizon(h):
    """Horizons accept floats or fraction strings like '1/3'."""
    if isinstance(h, str):
        from fractions import Fraction
        return float(Fraction(h))
    return float(h)


def ar1_window_density(y_window, y_last):
    c, phi, s2 = fit_ar1(y_window)
    return ForecastDensity(np.array([c + phi * y_last]), np.array([s2]), np.array([1.0]))


def run_rolling_nowcast(panel, cfg, n_jobs=1):
    """Rolling-window nowcast with the pooling menu.

    `panel` is (y, series_list); cfg carries window, horizons, the basis and
    volatility menus, partition groups (name -> series names; empty for
    whole-dataset only), mcmc settings and the score-exclusion list.
    Returns {"scores": DataFrame, "per_origin": DataFrame, "manifest": dict}.
    """
    y, series = panel
    y = np.asarray(y, dtype=float)
    window = int(cfg["window"])
    horizons = [_parse_horizon(h) for h in cfg.get("horizons", [0.0])]
    bases = [(_parse_basis_spec(b)) for b in cfg.get("bases", ["restricted_almon:3"])]
    vols = [v for v in cfg.get("volatility", ["homoskedastic"])]
    groups_map = dict(cfg.get("groups", {}) or {})
    p_y = int(cfg.get("p_y", 1))
    p_x = int(cfg.get("p_x", 11))
    n_oos = int(cfg["n_oos"])
    exclude = set(cfg.get("exclude_indices", []))
    mcmc = McmcSettings(**cfg["mcmc"])
    prior_cfg = cfg.get("prior", {})
    center = bool(cfg.get("center", True))

    by_name = {s.name: s for s in series}
    for gname, names in groups_map.items():
        unknown = [n for n in names if n not in by_name]
        if unknown:
            raise ValueError(f"partition group {gname!r} names unknown series {unknown}")
    partitions = [("whole", [s.name for s in series])]
    partitions += [(f"grp:{gname}", names) for gname, names in groups_map.items()]

    # member models: (partition, basis, vol) -> per-origin predictive per horizon
    model_keys = []
    for pname, names in partitions:
        for family, gb in bases:
            for vol in vols:
                model_keys.append((pname, f"{family}:{gb}", vol, tuple(names)))

    T_total = y.size
    first_target = T_total - n_oos
    if first_target - window < 1:
        raise ValueError(f"window {window} plus {n_oos} out-of-sample periods exceed the"
                         f" sample ({T_total} periods)")
    origins = list(range(first_target, T_total))

    def fit_one(key_idx, origin_idx):
        pname, basis_txt, vol, names = model_keys[key_idx]
        family, gb = _parse_basis_spec(basis_txt)
        target_t = origins[origin_idx]
        out = {}
        for h in horizons:
            basis = make_basis(family, gb, p_x)
            sub = [by_name[n] for n in names]
            design = assemble_midas_design(y[:target_t + 1], sub, basis, h=h, p_y=p_y)
            if design.T < window + 1:
                raise ValueError(f"window {window} infeasible at origin {target_t}")
            rows = slice(design.T - 1 - window, design.T - 1)
            fit = type(design)(design.y[rows], design.Z[rows], design.partition,
                               design.group_labels, design.horizon, design.basis_meta)
            if center:
                fit = fit.centered()
            prior = build_prior(prior_cfg, len(names), window, basis.g)
            seed = _chain_seed(mcmc.seed, key_idx, origin_idx, int(round(3 * h)))
            chain = run_chain(fit, prior, replace(mcmc, seed=seed), volatility=vol)
            out[h] = posterior_predictive(chain, design.Z[design.T - 1])
        return out

    jobs = [(k, o) for k in range(len(model_keys)) for o in range(len(origins))]
    results = Parallel(n_jobs=n_jobs)(delayed(fit_one)(k, o) for k, o in jobs)
    member = {}   # (key_idx, h) -> list over origins of ForecastDensity
    for (k, o), res in zip(jobs, results):
        for h, fd in res.items():
            member.setdefault((k, h), [None] * len(origins))[o] = fd

    bench = {h: [ar1_window_density(y[max(0, t - window):t], y[t - 1]) for t in origins]
             for h in horizons}
    outcomes = y[origins]
    keep = np.array([t not in exclude for t in origins])
    if keep.sum() < 1:
        raise ValueError("score exclusions removed every out-of-sample period")

    def label(k):
        pname, basis_txt, vol, _ = model_keys[k]
        return f"{pname}|{basis_txt}|{vol}"

    candidates = {label(k): {h: member[(k, h)] for h in horizons}
                  for k in range(len(model_keys))}

    # pooling menu: groups pooled per (basis, vol); then volatility pools per basis;
    # then the all-in pool; same two levels for the whole-dataset models
    group_keys = [k for k in range(len(model_keys)) if model_keys[k][0] != "whole"]
    whole_keys = [k for k in range(len(model_keys)) if model_keys[k][0] == "whole"]
    pools = {}
    if group_keys:
        for family, gb in bases:
            for vol in vols:
                ks = [k for k in group_keys
                      if model_keys[k][1] == f"{family}:{gb}" and model_keys[k][2] == vol]
                if len(ks) > 1:
                    pools[f"pool:groups|{family}:{gb}|{vol}"] = [label(k) for k in ks]
        for family, gb in bases:
            ks = [f"pool:groups|{family}:{gb}|{vol}" for vol in vols]
            ks = [k for k in ks if k in pools]
            if len(ks) > 1:
                pools[f"pool:groups|{family}:{gb}|all-vol"] = ks
        lvl1 = [k for k in pools if k.count("|") == 2 and k.startswith("pool:groups")]
        if len(lvl1) > 1:
            pools["pool:groups|all"] = lvl1
    if whole_keys:
        for family, gb in bases:
            ks = [label(k) for k in whole_keys if model_keys[k][1] == f"{family}:{gb}"]
            if len(ks) > 1:
                pools[f"pool:whole|{family}:{gb}|all-vol"] = ks
        if len(whole_keys) > 1:
            pools["pool:whole|all"] = [label(k) for k in whole_keys]

    def build_pool(members_by_h, h):
        """Optimal-pool densities with weights trained on past origins only."""
        seqs = [candidates[m][h] if m in candidates else pooled[m][h] for m in members_by_h]
        out = []
        weights_path = []
        for o in range(len(origins)):
            usable = [j for j in range(o) if keep[j]]
            if len(usable) >= 2:
                L = np.array([[seqs[i][j].logpdf(outcomes[j]) for j in usable]
                              for i in range(len(seqs))])
                w = optimal_pool(L)
            else:
                w = np.full(len(seqs), 1.0 / len(seqs))
            weights_path.append(w)
            out.append(pool_density([seqs[i][o] for i in range(len(seqs))], w))
        return out, weights_path

    pooled = {}
    pool_weights = {}
    for name, members in pools.items():
        pooled[name] = {}
        for h in horizons:
            pooled[name][h], pool_weights[(name, h)] = build_pool(members, h)

    rows = []
    everything = {**candidates, **pooled}
    for name, seq_by_h in everything.items():
        for h in horizons:
            fds = [fd for fd, ok in zip(seq_by_h[h], keep) if ok]
            outs = outcomes[keep]
            bmk = [b for b, ok in zip(bench[h], keep) if ok]
            sc = forecast_scores(fds, outs, benchmark=bmk)
            rows.append({"model": name, "horizon": h, "rmsfe": sc.rmsfe,
                         "logs": sc.avg_logs, "crps": sc.avg_crps,
                         "rel_rmsfe": sc.rel_rmsfe, "rel_logs": sc.rel_logs,
                         "rel_crps": sc.rel_crps, "n_scored": int(keep.sum())})
    scores = pd.DataFrame(rows).sort_values(["model", "horizon"]).reset_index(drop=True)

    per_origin = pd.DataFrame({
        "origin_index": origins, "outcome": outcomes, "scored": keep,
    })
    manifest = {
        "window": window, "horizons": horizons, "n_oos": n_oos,
        "models": {label(k): {"partition": model_keys[k][0], "basis": model_keys[k][1],
                              "volatility": model_keys[k][2]}
                   for k in range(len(model_keys))},
        "pools": pools, "mcmc": dict(cfg["mcmc"]), "excluded_indices": sorted(exclude),
    }
    return {"scores": scores, "per_origin": per_origin, "manifest": manifest,
            "densities": everything, "origins": origins, "outcomes": outcomes}

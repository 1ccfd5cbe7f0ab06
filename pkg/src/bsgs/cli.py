"""Command-line surface: config-driven simulation studies, estimation,
hyperparameter tuning and rolling nowcasts.

Verbs: simulate-grouped, simulate-midas, estimate, tune, nowcast.  Every
verb reads one YAML config (key/value with nested sections) and writes
deterministic files into the output directory; rerunning with the same
config and seed reproduces every CSV/JSON byte for byte.  Only the output
directory (BSGS_OUT) and the thread count (BSGS_THREADS) can be overridden
from the environment.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from datetime import date, datetime
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .design import HighFreqSeries, assemble_grouped_design, \
    assemble_midas_design, make_basis
from .dgp import beta_lag_weights
from .sampler import McmcSettings, posterior_predictive, run_chain
from .tuning import GridSpec, dic, select_c
from .workflows import build_prior, run_rolling_nowcast, run_simulation_study

MODES = ("simulate-grouped", "simulate-midas", "estimate", "tune", "nowcast")
TRANSFORMS = ("level", "logdiff", "growth")
PERIODS_PER_YEAR = {"q": 4, "m": 12}


class ConfigError(ValueError):
    pass


# -- panel ingestion ---------------------------------------------------------


def _parse_dates(raw, path):
    out = []
    for i, val in enumerate(raw):
        try:
            out.append(date.fromisoformat(str(val)))
        except ValueError as exc:
            raise ConfigError(f"{path}: unparseable ISO date {val!r} at row {i + 2}") from exc
    return out


def _apply_transform(values, code, freq):
    if code == "level":
        return values.copy()
    if code not in TRANSFORMS:
        raise ConfigError(f"unknown transform code {code!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        logv = np.log(values)
    out = np.full_like(values, np.nan)
    out[1:] = np.diff(logv)
    if code == "growth":
        out *= 100.0 * PERIODS_PER_YEAR[freq]   # e.g. 400 log(Y_t/Y_{t-1}) on quarters
    else:
        out *= 100.0
    return out


def load_panel(path, schema):
    """Typed mixed-frequency panel from a monthly-row CSV.

    The file has one row per month with an ISO date column; quarterly
    series carry values only on quarter-end months.  Each series is
    declared in schema["frequencies"] ("q" or "m") and transformed per
    schema["transforms"] (level, logdiff, growth; growth annualizes the log
    difference).  Rows before the first fully observed quarter are
    trimmed; gaps inside the estimation window raise with the series and
    date.  Returns (y, [HighFreqSeries...], meta).
    """
    path = Path(path)
    frame = pd.read_csv(path)
    date_col = schema.get("date_column", "date")
    if date_col not in frame.columns:
        raise ConfigError(f"{path}: missing date column {date_col!r}")
    dates = _parse_dates(frame[date_col].tolist(), path)
    target = schema["target"]
    freqs = dict(schema.get("frequencies", {}))
    transforms = dict(schema.get("transforms", {}))
    series_names = [c for c in frame.columns if c != date_col]
    if target not in series_names:
        raise ConfigError(f"{path}: target column {target!r} not found")
    for name in series_names:
        if freqs.get(name) not in PERIODS_PER_YEAR:
            raise ConfigError(f"{path}: series {name!r} needs a frequency of 'q' or 'm'")
    if freqs[target] != "q":
        raise ConfigError("the target series must be quarterly")

    transformed = {}
    for name in series_names:
        vals = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=float)
        if freqs[name] == "q":
            present = ~np.isnan(vals)
            idx = np.flatnonzero(present)
            if idx.size < 2:
                raise ConfigError(f"{path}: quarterly series {name!r} has too few values")
            if np.any(np.diff(idx) != 3):
                bad = idx[np.flatnonzero(np.diff(idx) != 3)[0] + 1]
                raise ConfigError(f"{path}: quarterly series {name!r} has irregular spacing"
                                  f" near {dates[bad]}")
            q_vals = _apply_transform(vals[idx], transforms.get(name, "level"), "q")
            transformed[name] = (idx, q_vals)
            if name == target:
                continue
            t_idx = np.flatnonzero(~np.isnan(
                pd.to_numeric(frame[target], errors="coerce").to_numpy(dtype=float)))
            if not np.array_equal(idx, t_idx):
                raise ConfigError(f"{path}: ragged frequencies: quarterly series {name!r}"
                                  f" does not share the target's quarter-end rows")
        else:
            m_vals = _apply_transform(vals, transforms.get(name, "level"), "m")
            transformed[name] = (np.arange(len(vals)), m_vals)

    q_idx, y_vals = transformed[target]
    if q_idx[-1] != len(dates) - 1:
        raise ConfigError(f"{path}: the panel must end on a quarter-end row of the target"
                          f" (last target value at {dates[q_idx[-1]]})")
    # first fully observed quarter: every series available from its first month on
    start_q = 0
    while start_q < len(q_idx):
        month_hi = q_idx[start_q]
        month_lo = month_hi - 2
        ok = not math.isnan(y_vals[start_q]) and month_lo >= 0
        if ok:
            for name in series_names:
                if name == target or freqs[name] == "q":
                    continue
                window = transformed[name][1][month_lo:month_hi + 1]
                if np.any(np.isnan(window)):
                    ok = False
                    break
        if ok:
            break
        start_q += 1
    if start_q >= len(q_idx):
        raise ConfigError(f"{path}: no fully observed quarter found")

    y = y_vals[start_q:]
    month_start = q_idx[start_q] - 2
    hf = []
    for name in series_names:
        if name == target:
            continue
        if freqs[name] == "m":
            vals = transformed[name][1][month_start:]
            nan_pos = np.flatnonzero(np.isnan(vals))
            if nan_pos.size:
                raise ConfigError(
                    f"{path}: series {name!r} missing inside the estimation window at"
                    f" {dates[month_start + nan_pos[0]]}")
            hf.append(HighFreqSeries(name, vals, m=3))
        else:
            idx, vals = transformed[name]
            nan_pos = np.flatnonzero(np.isnan(vals[start_q:]))
            if nan_pos.size:
                raise ConfigError(
                    f"{path}: series {name!r} missing inside the estimation window at"
                    f" {dates[idx[start_q + nan_pos[0]]]}")
            hf.append(HighFreqSeries(name, vals[start_q:], m=1))
    if np.any(np.isnan(y)):
        pos = int(np.flatnonzero(np.isnan(y))[0])
        raise ConfigError(f"{path}: target missing at {dates[q_idx[start_q + pos]]}")
    meta = {"quarter_dates": [dates[i] for i in q_idx[start_q:]],
            "names": [s.name for s in hf], "m": 3}
    return y, hf, meta


# -- deterministic emission --------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (date, datetime)):
        return obj.isoformat()
    if isinstance(obj, pd.DataFrame):
        return _jsonable(obj.to_dict(orient="list"))
    return obj


def write_json(payload, path):
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_csv(frame, path):
    frame.to_csv(path, index=False)   # str() floats round-trip exactly
    return Path(path)


def emit_report(results, out_dir, formats=("csv", "json")):
    """Write tables, JSON payloads and plots with deterministic names.

    results: {"tables": {name: DataFrame}, "payloads": {name: dict},
    "plots": {name: callable(ax)}}.  Returns the list of written paths.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out_dir} is not writable: {exc}") from exc
    written = []
    if "csv" in formats:
        for name, frame in sorted(results.get("tables", {}).items()):
            written.append(write_csv(frame, out_dir / f"{name}.csv"))
    if "json" in formats:
        for name, payload in sorted(results.get("payloads", {}).items()):
            written.append(write_json(payload, out_dir / f"{name}.json"))
    if "svg" in formats and results.get("plots"):
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        plt.rcParams["svg.hashsalt"] = "bsgs"
        for name, draw in sorted(results.get("plots", {}).items()):
            fig, ax = plt.subplots(figsize=(7, 4))
            draw(ax)
            fig.tight_layout()
            fig.savefig(out_dir / f"{name}.svg", format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(out_dir / f"{name}.svg")
    return written


def weight_shape_plot(weight_menu, p_x=11):
    """Axis painter for the lag-weight shapes (flat renders as a horizontal line)."""
    def draw(ax):
        for label, (a, b, c) in weight_menu.items():
            w = beta_lag_weights(a, b, c, p_x)
            ax.plot(np.arange(p_x + 1), w, marker="o", ms=3, label=label)
        ax.set_xlabel("high-frequency lag")
        ax.set_ylabel("weight")
        ax.legend(frameon=False, fontsize=8)
    return draw


def basis_shape_plot(basis_specs, p_x=11):
    def draw(ax):
        from .workflows import _parse_basis_spec
        for txt in basis_specs:
            family, g = _parse_basis_spec(txt)
            basis = make_basis(family, g, p_x)
            for i, row in enumerate(basis.values):
                ax.plot(np.arange(p_x + 1), row, lw=1,
                        label=txt if i == 0 else None)
        ax.set_xlabel("high-frequency lag")
        ax.set_ylabel("basis value")
        ax.legend(frameon=False, fontsize=8)
    return draw


def fan_chart_plot(origins, outcomes, densities):
    def draw(ax):
        lo90, lo50, med, hi50, hi90 = [], [], [], [], []
        from scipy.optimize import brentq
        for fd in densities:
            span = (fd.means.min() - 6 * np.sqrt(fd.variances.max()),
                    fd.means.max() + 6 * np.sqrt(fd.variances.max()))
            def q(p):
                return brentq(lambda x: fd.cdf(x) - p, span[0], span[1])
            lo90.append(q(0.05)); lo50.append(q(0.25)); med.append(q(0.5))
            hi50.append(q(0.75)); hi90.append(q(0.95))
        ax.fill_between(origins, lo90, hi90, alpha=0.2, label="90%")
        ax.fill_between(origins, lo50, hi50, alpha=0.35, label="50%")
        ax.plot(origins, med, lw=1.2, label="median")
        ax.plot(origins, outcomes, "k.", ms=4, label="outcome")
        ax.set_xlabel("origin")
        ax.legend(frameon=False, fontsize=8)
    return draw


# -- config handling ---------------------------------------------------------


def load_config(path):
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return cfg


def _require(cfg, key, mode):
    if key not in cfg:
        raise ConfigError(f"mode {mode!r} requires a {key!r} block")
    return cfg[key]


def _design_from_panel(y, series, model_cfg, names=None):
    names = names or [s.name for s in series]
    by_name = {s.name: s for s in series}
    unknown = [n for n in names if n not in by_name]
    if unknown:
        raise ConfigError(f"partition names unknown series {unknown}")
    chosen = [by_name[n] for n in names]
    p_y = int(model_cfg.get("p_y", 1))
    h = float(model_cfg.get("h", 0.0))
    if all(s.m == 1 for s in chosen):
        # same-frequency panel: one block per named series (or per group map)
        blocks = [s.values[:, None] for s in chosen]
        T = min(b.shape[0] for b in blocks)
        lag = p_y
        Z_blocks = [b[-(T - lag):] for b in blocks]
        yv = y[-T:]
        if p_y:
            ar = np.column_stack([yv[lag - k - 1:T - k - 1] for k in range(p_y)])
            Z_blocks.append(ar)
        labels = names + (["y_lags"] if p_y else [])
        return assemble_grouped_design(Z_blocks, yv[lag:], h=h, group_labels=labels)
    basis_cfg = model_cfg.get("basis", {"family": "umidas"})
    basis = make_basis(basis_cfg.get("family", "umidas"), int(basis_cfg.get("g", 5)),
                       int(model_cfg.get("p_x", 11)),
                       restricted=bool(basis_cfg.get("restricted", False)))
    return assemble_midas_design(y, chosen, basis, h=h, p_y=p_y)


# -- verbs -------------------------------------------------------------------


def cmd_simulate(cfg, kind, out_dir, formats, threads, seed_override):
    dgp_cfg = dict(_require(cfg, "dgp", f"simulate-{kind}"))
    dgp_cfg["kind"] = kind
    if seed_override is not None:
        dgp_cfg["seed"] = seed_override
    study = dict(cfg.get("study", {}))
    res = run_simulation_study(
        dgp_cfg, dict(_require(cfg, "mcmc", "simulate")), prior_cfg=cfg.get("prior"),
        replications=int(study.get("replications", 10)),
        seed=int(dgp_cfg.get("seed", 0)),
        volatility=cfg.get("model", {}).get("volatility", "homoskedastic"),
        tune_cfg=study.get("tune"), n_jobs=threads,
        selection_threshold=float(study.get("selection_threshold", 0.5)))
    manifest = res["manifest"]
    tables = {"study_table": res["table"], "per_rep": res["per_rep"]}
    if "dic_table" in manifest:
        tables["dic_table"] = manifest.pop("dic_table")
    payloads = {"manifest": manifest}
    if study.get("emit_data"):
        from .dgp import simulate_grouped, simulate_midas
        from .workflows import make_dgp_spec
        spec = make_dgp_spec(dgp_cfg, int(dgp_cfg.get("seed", 0)))
        if kind == "grouped":
            d_in, _, truth = simulate_grouped(spec, rep=0, sigma_eps=manifest["sigma_eps"])
        else:
            _, d_in, _, truth = simulate_midas(spec, rep=0, sigma_eps=manifest["sigma_eps"])
        cols = {"t": np.arange(1, d_in.T + 1), "y": d_in.y}
        for j, (s, e) in enumerate(d_in.group_bounds()):
            for k in range(e - s):
                cols[f"{d_in.group_labels[j]}__c{k}"] = d_in.Z[:, s + k]
        tables["dataset_rep0"] = pd.DataFrame(cols)
        payloads["dataset_truth"] = {
            "theta0": truth.theta0, "group_support": truth.group_support,
            "var_support": truth.var_support, "sigma_eps": truth.sigma_eps,
            "nsr_convention": truth.nsr_convention,
            "weights": truth.weights,
        }
    plots = {}
    if kind == "midas":
        wp = tuple(dgp_cfg.get("weight_params", (5.0, 15.0, 0.0)))
        plots["weight_shapes"] = weight_shape_plot({f"({wp[0]},{wp[1]},{wp[2]})": wp},
                                                   p_x=int(dgp_cfg.get("p_x", 11)))
    return emit_report({"tables": tables, "payloads": payloads,
                        "plots": plots}, out_dir, formats)


def cmd_estimate(cfg, out_dir, formats, threads, seed_override):
    data_cfg = _require(cfg, "data", "estimate")
    model_cfg = dict(cfg.get("model", {}))
    mcmc_cfg = dict(_require(cfg, "mcmc", "estimate"))
    if seed_override is not None:
        mcmc_cfg["seed"] = seed_override
    y, series, meta = load_panel(data_cfg["path"], data_cfg)
    names = model_cfg.get("series") or meta["names"]
    design = _design_from_panel(y, series, model_cfg, names)
    n_exog = design.n_groups - int(design.group_labels[-1] == "y_lags")
    g_max = max(design.partition[:n_exog]) if n_exog else 1
    prior = build_prior(cfg.get("prior"), max(n_exog, 2), design.T, g_max)
    volatility = model_cfg.get("volatility", "homoskedastic")
    fit_design = design.centered() if model_cfg.get("center", True) else design
    chain = run_chain(fit_design, prior, McmcSettings(**mcmc_cfg), volatility=volatility)
    theta_med = np.median(chain.theta_draws, axis=0)
    lo, hi = np.quantile(chain.theta_draws, [0.05, 0.95], axis=0)
    groups = [design.group_labels[design.group_of_column(c)] for c in range(design.width)]
    posterior = pd.DataFrame({
        "column": np.arange(design.width), "group": groups,
        "theta_median": theta_med, "theta_q05": lo, "theta_q95": hi,
        "inclusion": chain.inclusion_within,
    })
    incl = pd.DataFrame({"group": design.group_labels,
                         "inclusion": chain.inclusion_group})
    fd = posterior_predictive(chain, design.Z[-1])
    payload = {
        "volatility": volatility,
        "prior": {"c0": prior.c0, "c1": prior.c1},
        "next_period_mean": fd.mean(),
        "next_period_variance": fd.variance(),
        "tau_acceptance": chain.mcmc_meta["tau_acceptance"],
        "seed": mcmc_cfg.get("seed", 0),
    }
    if volatility == "homoskedastic":
        payload["dic"] = dic(chain, fit_design)
    return emit_report({"tables": {"posterior": posterior, "inclusion_groups": incl},
                        "payloads": {"estimate": payload}}, out_dir, formats)


def cmd_tune(cfg, out_dir, formats, threads, seed_override):
    data_cfg = _require(cfg, "data", "tune")
    tune_cfg = dict(_require(cfg, "tune", "tune"))
    model_cfg = dict(cfg.get("model", {}))
    y, series, meta = load_panel(data_cfg["path"], data_cfg)
    design = _design_from_panel(y, series, model_cfg, model_cfg.get("series"))
    n_exog = design.n_groups - int(design.group_labels[-1] == "y_lags")
    g_max = max(design.partition[:n_exog]) if n_exog else 1
    template = build_prior(cfg.get("prior"), max(n_exog, 2), design.T, g_max)
    template = replace(template, c0=None, c1=None)
    if model_cfg.get("center", True):
        design = design.centered()
    grid = GridSpec(tuple(tune_cfg["c0_range"]), tuple(tune_cfg["c1_range"]),
                    points=int(tune_cfg.get("points", 10)),
                    seed=seed_override if seed_override is not None
                    else int(tune_cfg.get("seed", 0)))
    short = McmcSettings(int(tune_cfg.get("sweeps", 10_000)),
                         int(tune_cfg.get("burn_in", 2_000)),
                         thin=int(tune_cfg.get("thin", 5)), seed=grid.seed)
    c0, c1, table = select_c(design, template, grid, short, n_jobs=threads)
    return emit_report({"tables": {"dic_table": table},
                        "payloads": {"selected": {"c0": c0, "c1": c1,
                                                  "grid_seed": grid.seed}}},
                       out_dir, formats)


def cmd_nowcast(cfg, out_dir, formats, threads, seed_override):
    data_cfg = _require(cfg, "data", "nowcast")
    now_cfg = dict(_require(cfg, "nowcast", "nowcast"))
    if seed_override is not None:
        now_cfg.setdefault("mcmc", {})
        now_cfg["mcmc"] = dict(now_cfg["mcmc"], seed=seed_override)
    now_cfg.setdefault("prior", cfg.get("prior", {}))
    y, series, meta = load_panel(data_cfg["path"], data_cfg)
    exclude_dates = {date.fromisoformat(str(d)) for d in now_cfg.pop("exclude_dates", [])}
    if exclude_dates:
        qdates = meta["quarter_dates"]
        now_cfg["exclude_indices"] = [i for i, d in enumerate(qdates) if d in exclude_dates]
    res = run_rolling_nowcast((y, series), now_cfg, n_jobs=threads)
    plots = {}
    if "svg" in formats:
        scores = res["scores"]
        h0 = scores["horizon"].min()
        at_h = scores[scores["horizon"] == h0]
        best = at_h.sort_values(["rel_crps", "model"]).iloc[0]["model"]
        plots["fan_chart"] = fan_chart_plot(res["origins"], res["outcomes"],
                                            res["densities"][best][h0])
        if now_cfg.get("bases"):
            plots["basis_shapes"] = basis_shape_plot(now_cfg["bases"],
                                                     int(now_cfg.get("p_x", 11)))
    return emit_report({"tables": {"scores": res["scores"], "per_origin": res["per_origin"]},
                        "payloads": {"manifest": res["manifest"]}, "plots": plots},
                       out_dir, formats)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="bsgs",
        description="Bi-level sparse group spike-and-slab regression toolkit")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="YAML configuration file")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--format", default=None,
                        help="comma list from csv,json,svg (default csv,json)")
    args = parser.parse_args(argv)

    cfg = load_config(args.config)
    out_dir = os.environ.get("BSGS_OUT") or args.out or cfg.get("out_dir", "bsgs_out")
    threads_env = os.environ.get("BSGS_THREADS")
    threads = int(threads_env) if threads_env else (
        args.threads if args.threads is not None else int(cfg.get("threads", 1)))
    formats = tuple((args.format or ",".join(cfg.get("formats", ["csv", "json"]))).split(","))
    bad = set(formats) - {"csv", "json", "svg"}
    if bad:
        raise ConfigError(f"unknown output formats: {sorted(bad)}")

    if args.mode == "simulate-grouped":
        written = cmd_simulate(cfg, "grouped", out_dir, formats, threads, args.seed)
    elif args.mode == "simulate-midas":
        written = cmd_simulate(cfg, "midas", out_dir, formats, threads, args.seed)
    elif args.mode == "estimate":
        written = cmd_estimate(cfg, out_dir, formats, threads, args.seed)
    elif args.mode == "tune":
        written = cmd_tune(cfg, out_dir, formats, threads, args.seed)
    else:
        written = cmd_nowcast(cfg, out_dir, formats, threads, args.seed)
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

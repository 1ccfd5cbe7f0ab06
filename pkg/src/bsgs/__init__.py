"""Bi-level sparse group spike-and-slab regression for forecasting.

Library layout:

- design: lag-polynomial bases and grouped/MIDAS design assembly
- sampler: the Gibbs sampler, priors, chain output, posterior predictive
- volatility: stochastic-volatility error block (Student-t, outliers)
- tuning: analytic hyperparameter bounds and DIC-based selection
- dgp: Monte Carlo data generators
- evaluation: estimation/selection/forecast metrics and optimal pooling
- cli: configuration-driven command line (simulate/estimate/tune/nowcast)
"""

from .design import (BasisMatrix, GroupedDesign, HighFreqSeries, almon_basis,
                     assemble_grouped_design, assemble_midas_design, make_basis,
                     orthogonal_basis)
from .dgp import (DgpTruth, GroupedDgpSpec, MidasDgpSpec, SkewNormalSpec, beta_lag_weights,
                  calibrate_noise, simulate_grouped, simulate_midas, skew_normal_params,
                  toeplitz_block_cov)
from .evaluation import (ScoreReport, SelectionReport, ar1_benchmark, ar1_oos_densities,
                         bilevel_sparse_singular_value, crps_gaussian_mixture,
                         estimation_metrics, forecast_scores, optimal_pool, pool_density,
                         selection_metrics)
from .sampler import (ChainOutput, ChainState, ForecastDensity, GibbsSampler, McmcSettings,
                      PriorHyperparams, posterior_predictive, run_chain, spike_prob_group,
                      spike_prob_within, truncnorm_positive)
from .tuning import GridSpec, c_lower_bounds, default_hyperparams, dic, select_c
from .volatility import SVConfig, SVState

__version__ = "0.1.0"

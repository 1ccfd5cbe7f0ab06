"""Regression design assembly for grouped and mixed-frequency (MIDAS) models.

A design is a response vector ``y`` plus a ``T x (sum g_j)`` regressor matrix
``Z`` whose columns are organised in contiguous group blocks.  Blocks come
either from raw same-frequency regressors (grouped case) or from projecting
high-frequency lag windows onto a small polynomial basis (MIDAS case), in
which case each high-frequency series forms one group.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import comb, eval_sh_chebyt, eval_sh_legendre

BASIS_FAMILIES = ("umidas", "almon", "restricted_almon", "legendre", "bernstein", "chebyshev_t")


class CalendarAlignmentError(ValueError):
    """A high-frequency series lacks the history needed for the requested window."""


@dataclass(frozen=True)
class BasisMatrix:
    """Lag-polynomial basis: g rows of basis-function values on lags 0..p_x."""

    values: np.ndarray          # (g, p_x + 1)
    family: str
    g: int
    p_x: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if self.family not in BASIS_FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}")
        if v.shape != (self.g, self.p_x + 1):
            raise ValueError(f"basis values shape {v.shape} != ({self.g}, {self.p_x + 1})")
        if not np.all(np.isfinite(v)):
            raise ValueError("basis values must be finite")


@dataclass(frozen=True)
class HighFreqSeries:
    """One high-frequency predictor, oldest first.

    The last observation is the final sub-period of the last low-frequency
    period covered by the target: observation ``k`` of period ``t`` sits at
    high-frequency time ``t - (m - k)/m`` for ``k = 1..m``.
    """

    name: str
    values: np.ndarray
    m: int

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.m < 1:
            raise ValueError("frequency ratio m must be >= 1")


@dataclass
class GroupedDesign:
    """Response, block-structured regressor matrix and group bookkeeping."""

    y: np.ndarray
    Z: np.ndarray
    partition: tuple
    group_labels: tuple = ()
    horizon: float = 0.0
    basis_meta: dict | None = None
    scale_info: dict | None = None   # set when columns were rescaled

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        self.partition = tuple(int(g) for g in self.partition)
        if self.y.size < 1:
            raise ValueError("empty response")
        if self.Z.shape[0] != self.y.size:
            raise ValueError(f"Z has {self.Z.shape[0]} rows but y has {self.y.size}")
        if any(g < 1 for g in self.partition):
            raise ValueError("group sizes must be positive")
        if sum(self.partition) != self.Z.shape[1]:
            raise ValueError(
                f"partition {self.partition} sums to {sum(self.partition)}"
                f" but Z has {self.Z.shape[1]} columns")
        if not self.group_labels:
            self.group_labels = tuple(f"group{j + 1}" for j in range(len(self.partition)))
        if len(self.group_labels) != len(self.partition):
            raise ValueError("one label per group required")
        if not (np.all(np.isfinite(self.Z)) and np.all(np.isfinite(self.y))):
            raise ValueError("missing or non-finite values inside the estimation window")

    @property
    def T(self):
        return self.y.size

    @property
    def n_groups(self):
        return len(self.partition)

    @property
    def width(self):
        return self.Z.shape[1]

    def group_bounds(self):
        """(start, end) column offsets of each block, end exclusive."""
        ends = np.cumsum(self.partition)
        starts = ends - np.asarray(self.partition)
        return list(zip(starts.tolist(), ends.tolist()))

    def group_slice(self, j):
        start, end = self.group_bounds()[j]
        return slice(start, end)

    def group_of_column(self, c):
        """Group index of column c, recovered from the partition."""
        if not 0 <= c < self.width:
            raise IndexError(f"column {c} outside design of width {self.width}")
        return int(np.searchsorted(np.cumsum(self.partition), c, side="right"))

    def standardized(self):
        """Copy with unit-standard-deviation columns; scales kept in metadata."""
        scales = self.Z.std(axis=0, ddof=0)
        if np.any(scales == 0):
            raise ValueError("cannot standardize a constant column")
        out = GroupedDesign(self.y, self.Z / scales, self.partition, self.group_labels,
                            self.horizon, self.basis_meta)
        out.scale_info = dict(self.scale_info or {}, column_scales=scales)
        return out

    def centered(self):
        """Copy with the response and every column demeaned.

        Centering absorbs an unpenalized intercept: the sampling model has
        no constant term, so a response with a nonzero level otherwise
        leaks into the error variance and distorts the selection
        indicators.  The stored means let predictions be mapped back to
        the original scale.
        """
        y_mean = float(self.y.mean())
        col_means = self.Z.mean(axis=0)
        out = GroupedDesign(self.y - y_mean, self.Z - col_means, self.partition,
                            self.group_labels, self.horizon, self.basis_meta)
        out.scale_info = dict(self.scale_info or {}, y_mean=y_mean, column_means=col_means)
        return out


def almon_basis(g, p_x, restricted=False):
    """Almon lag polynomial basis on the lag grid 0..p_x.

    Unrestricted rows are the monomials u^i, i = 0..g-1.  The restricted
    variant reparameterizes a degree-(g+1) polynomial so every row vanishes
    at the endpoint and has zero discrete slope there (tail-off to zero):
    r(p_x) = 0 and r(p_x) - r(p_x - 1) = 0, imposed exactly by the factor
    (u - p_x)(u - p_x + 1).
    """
    g = int(g)
    p_x = int(p_x)
    if g < 1:
        raise ValueError("g must be >= 1")
    if p_x < 0:
        raise ValueError("p_x must be >= 0")
    u = np.arange(p_x + 1, dtype=float)
    if not restricted:
        values = np.vstack([u ** i for i in range(g)])
        return BasisMatrix(values, "almon", g, p_x)
    if g < 3:
        raise ValueError("restricted Almon needs g >= 3 (two endpoint restrictions)")
    tail = (u - p_x) * (u - (p_x - 1))
    values = np.vstack([u ** i * tail for i in range(g)])
    # unit discrete norm per row: rescaling preserves both endpoint zeros and
    # the span while keeping the regression columns on a sane scale
    norms = np.linalg.norm(values, axis=1)
    if np.any(norms == 0):
        raise ValueError("degenerate restricted basis: increase p_x")
    return BasisMatrix(values / norms[:, None], "restricted_almon", g, p_x)


def _bernstein_rows(g, x):
    n = g - 1
    return np.vstack([comb(n, i) * x ** i * (1.0 - x) ** (n - i) for i in range(g)])


def orthogonal_basis(family, g, p_x):
    """Orthogonal lag-polynomial basis evaluated at u/p_x on [0, 1].

    Legendre and Chebyshev (first kind) use the shifted polynomials;
    Bernstein uses the degree-(g-1) Bernstein basis.  All three are then
    orthonormalized under the discrete inner product over the p_x + 1 lag
    positions, which is the metric in which the columns enter the
    likelihood.  ``umidas`` returns the identity (one free weight per lag)
    and ignores g.
    """
    family = str(family).lower().replace("-", "_").replace(" ", "_")
    aliases = {"chebyshev": "chebyshev_t", "chebyshevt": "chebyshev_t", "cheb_t": "chebyshev_t"}
    family = aliases.get(family, family)
    if family == "almon" or family == "restricted_almon":
        raise ValueError("use almon_basis() for Almon families")
    if family not in BASIS_FAMILIES:
        raise ValueError(f"unknown basis family {family!r}")
    p_x = int(p_x)
    if p_x < 0:
        raise ValueError("p_x must be >= 0")
    if family == "umidas":
        g = p_x + 1
        return BasisMatrix(np.eye(g), "umidas", g, p_x)
    g = int(g)
    if g < 1:
        raise ValueError("g must be >= 1")
    if p_x == 0 and g > 1:
        raise ValueError("p_x = 0 admits only a single basis function")
    if g > p_x + 1:
        raise ValueError(f"cannot orthonormalize {g} functions on {p_x + 1} lag points")
    x = np.arange(p_x + 1, dtype=float) / p_x if p_x > 0 else np.zeros(1)
    if family == "legendre":
        raw = np.vstack([eval_sh_legendre(i, x) for i in range(g)])
    elif family == "chebyshev_t":
        raw = np.vstack([eval_sh_chebyt(i, x) for i in range(g)])
    else:  # bernstein
        raw = _bernstein_rows(g, x)
    # Gram-Schmidt in the discrete lag-point metric, sign-fixed for determinism.
    q, r = np.linalg.qr(raw.T)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return BasisMatrix((q * signs).T, family, g, p_x)


def make_basis(family, g, p_x, restricted=False):
    """Dispatch helper covering the whole basis menu."""
    family = str(family).lower().replace("-", "_").replace(" ", "_")
    if family == "almon":
        return almon_basis(g, p_x, restricted=restricted)
    if family == "restricted_almon":
        return almon_basis(g, p_x, restricted=True)
    return orthogonal_basis(family, g, p_x)


def _hf_index(n, T_total, m, t, h_sub, u):
    # array index of x_{t - h - u/m} when the last entry sits at LF time T_total
    return n - 1 - m * (T_total - t) - h_sub - u


def assemble_midas_design(y, series, bases, h=0.0, p_y=1, group_labels=None):
    """Build a MIDAS design from high-frequency series and lag-polynomial bases.

    Column block j holds the basis projections (Phi_1' x_{j,t-h}, ...,
    Phi_g' x_{j,t-h}) of the lag window of series j; a final group of p_y
    autoregressive lags of y is appended.  Rows cover every low-frequency
    period t where all lag windows exist; if a series cannot support a
    single row, a CalendarAlignmentError names it and the first feasible t.

    h is the forecast horizon in low-frequency units and must be a multiple
    of 1/m for every series; with p_y > 0 it must satisfy h < 1 so the
    first autoregressive lag is observed.
    """
    y = np.asarray(y, dtype=float).ravel()
    T_total = y.size
    series = list(series)
    if not series:
        raise ValueError("at least one high-frequency series required")
    if isinstance(bases, BasisMatrix):
        bases = [bases] * len(series)
    if len(bases) != len(series):
        raise ValueError("one basis per series required")
    p_y = int(p_y)
    if p_y < 0:
        raise ValueError("p_y must be >= 0")
    h = float(h)
    if h < 0:
        raise ValueError("horizon must be >= 0")
    if p_y > 0 and h >= 1:
        raise ValueError("autoregressive lags require h < 1")

    # First feasible LF period for each series, and overall.
    first_ok = p_y + 1 if p_y > 0 else 1
    h_subs = []
    for s, basis in zip(series, bases):
        frac = Fraction(h).limit_denominator(10 ** 6) * s.m
        if frac.denominator != 1:
            raise ValueError(f"horizon {h} is not a multiple of 1/{s.m} for series {s.name!r}")
        h_sub = int(frac)
        h_subs.append(h_sub)
        n = s.values.size
        # need index of deepest lag u = p_x at time t to be >= 0
        t_min = T_total - (n - 1 - h_sub - basis.p_x) / s.m
        t_min = int(np.ceil(t_min - 1e-12))
        if t_min > T_total:
            raise CalendarAlignmentError(
                f"series {s.name!r} has too little history: first feasible"
                f" low-frequency period is t={t_min} but the sample ends at t={T_total}")
        first_ok = max(first_ok, t_min, 1)

    if first_ok > T_total:
        raise CalendarAlignmentError(
            f"no feasible estimation rows: first feasible low-frequency period"
            f" is t={first_ok} but the sample ends at t={T_total}")
    rows = range(first_ok, T_total + 1)
    blocks = []
    meta = {}
    labels = list(group_labels) if group_labels else [s.name for s in series]
    if len(labels) != len(series):
        raise ValueError("one label per series required")
    for s, basis, h_sub, label in zip(series, bases, h_subs, labels):
        n = s.values.size
        lagged = np.empty((len(rows), basis.p_x + 1))
        for k, t in enumerate(rows):
            top = _hf_index(n, T_total, s.m, t, h_sub, 0)
            lagged[k] = s.values[top - basis.p_x:top + 1][::-1]
        blocks.append(lagged @ basis.values.T)
        meta[label] = basis
    if p_y > 0:
        ar = np.column_stack([y[np.asarray(rows) - 1 - lag] for lag in range(1, p_y + 1)])
        blocks.append(ar)
        labels.append("y_lags")
    partition = tuple(b.shape[1] for b in blocks)
    return GroupedDesign(y[np.asarray(rows) - 1], np.hstack(blocks), partition,
                         tuple(labels), horizon=h, basis_meta=meta)


def assemble_grouped_design(blocks, y, h=0.0, group_labels=None):
    """Concatenate same-frequency regressor blocks into a grouped design."""
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    if not blocks:
        raise ValueError("at least one block required")
    T = blocks[0].shape[0]
    for k, b in enumerate(blocks):
        if b.shape[0] != T:
            raise ValueError(f"block {k} has {b.shape[0]} rows, expected {T}")
    partition = tuple(b.shape[1] for b in blocks)
    return GroupedDesign(y, np.hstack(blocks), partition,
                         tuple(group_labels) if group_labels else (), horizon=float(h))

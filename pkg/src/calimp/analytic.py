"""Closed-form large-sample behaviour on the 2x2 case.

With a binary covariate x, a binary outcome y and a logistic observation
model, every quantity of interest is cell arithmetic on the joint table
p(x, y): the observed and missing sub-tables are the joint table scaled
by the per-cell observation probabilities, saturated logistic fits are
log odds of cell values, and each imputation method corresponds to a
deterministic completed table. Biases computed here are exact limits
(no Monte Carlo error), which makes them a strong oracle for the
simulation machinery.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .calibration import required_missing_dist, solve_offset_binary
from .errors import DataError, NumericError
from .selection import SelectionModel

ANALYTIC_METHODS = (
    "cra",
    "standard-mi",
    "weighted-mi-marginal",
    "weighted-mi-conditional",
    "calibrated-mi",
)


@dataclass(frozen=True)
class PopulationTable:
    """Joint cell probabilities p(x, y) of the full data, indexed [x, y]."""

    cells: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        c = np.asarray(self.cells, dtype=float)
        if c.shape != (2, 2):
            raise DataError("population table must be 2x2")
        if (c <= 0).any():
            raise DataError("population cells must be strictly positive")
        if abs(c.sum() - 1.0) > 1e-9:
            raise DataError(f"population cells sum to {c.sum():.12g}")
        object.__setattr__(
            self, "cells", tuple(tuple(float(v) for v in row) for row in c))

    @classmethod
    def from_margins(cls, p_x: float, beta0: float,
                     beta_x: float) -> "PopulationTable":
        """x ~ Bernoulli(p_x) and logit p(y=1|x) = beta0 + beta_x * x."""
        if not 0.0 < p_x < 1.0:
            raise DataError("p_x must lie strictly inside (0, 1)")
        rows = []
        for x in (0, 1):
            p1 = float(expit(beta0 + beta_x * x))
            px = p_x if x == 1 else 1.0 - p_x
            rows.append((px * (1.0 - p1), px * p1))
        return cls(tuple(rows))

    @classmethod
    def from_counts(cls, n00, n01, n10, n11) -> "PopulationTable":
        """Cell counts n_xy, normalized."""
        total = float(n00 + n01 + n10 + n11)
        return cls(((n00 / total, n01 / total), (n10 / total, n11 / total)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.cells, dtype=float)

    @property
    def p_x(self) -> float:
        c = self.as_array()
        return float(c[1].sum())

    def beta(self) -> np.ndarray:
        """(beta0, beta_x) of the saturated outcome model y | x."""
        c = self.as_array()
        return np.array([
            np.log(c[0, 1] / c[0, 0]),
            np.log(c[1, 1] * c[0, 0] / (c[0, 1] * c[1, 0])),
        ])


def observed_missing_tables(tab: PopulationTable, model: SelectionModel):
    """(observed, missing) sub-tables o = p * p(r=1), m = p * p(r=0)."""
    c = tab.as_array()
    x = np.arange(2)[:, None]
    y = np.arange(2)[None, :]
    pr = expit(
        model.alpha0
        + (model.alpha_x if model.uses_x else 0.0) * x
        + (model.alpha_y if model.uses_y else 0.0) * y
    )
    return c * pr, c * (1.0 - pr)


def _theta_of(table: np.ndarray) -> np.ndarray:
    """(theta0, theta_y) of the saturated covariate model x | y."""
    if (table <= 0).any():
        raise NumericError(
            "degenerate sub-table: a cell has zero probability")
    return np.array([
        np.log(table[1, 0] / table[0, 0]),
        np.log(table[1, 1] * table[0, 0] / (table[0, 1] * table[1, 0])),
    ])


@dataclass(frozen=True)
class ThetaIdentities:
    """Imputation-model parameters implied by the observed and missing
    sub-tables, plus the marginals that link them."""

    theta_obs: tuple[float, float]
    theta_mis: tuple[float, float]
    p_r: float
    p_x_obs: float
    p_x_mis: float
    frac_missing: float


def theta_identities(tab: PopulationTable,
                     model: SelectionModel) -> ThetaIdentities:
    o, m = observed_missing_tables(tab, model)
    a = o.sum()
    if not 0.0 < a < 1.0:
        raise NumericError("observation rate is degenerate")
    return ThetaIdentities(
        theta_obs=tuple(_theta_of(o)),
        theta_mis=tuple(_theta_of(m)),
        p_r=float(a),
        p_x_obs=float(o[1].sum() / a),
        p_x_mis=float(m[1].sum() / (1.0 - a)),
        frac_missing=float(1.0 - a),
    )


@dataclass(frozen=True)
class BiasResult:
    method: str
    estimate: tuple[float, float]   # limiting (b0_hat, bx_hat)
    bias: tuple[float, float]
    frac_missing: float


def _beta_of(table: np.ndarray) -> np.ndarray:
    if (table <= 0).any():
        raise NumericError("degenerate table in outcome fit")
    return np.array([
        np.log(table[0, 1] / table[0, 0]),
        np.log(table[1, 1] * table[0, 0] / (table[0, 1] * table[1, 0])),
    ])


def _completed(o: np.ndarray, m: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Observed table plus missing y-columns filled with p(x=1|y) = s[y]."""
    c = o.copy()
    for y in (0, 1):
        my = m[0, y] + m[1, y]
        c[1, y] += my * s[y]
        c[0, y] += my * (1.0 - s[y])
    return c


def analytic_bias(tab: PopulationTable, model: SelectionModel,
                  method: str, pop: float | None = None) -> BiasResult:
    """Limiting bias of (b0_hat, bx_hat) for one method and mechanism.

    ``pop`` is the reference proportion p(x=1) handed to the calibrated
    and weighted methods; it defaults to the table's own marginal (an
    exact census).
    """
    if method not in ANALYTIC_METHODS:
        raise DataError(f"unknown analytic method '{method}'")
    o, m = observed_missing_tables(tab, model)
    if (o <= 0).any() or (m <= 0).any():
        raise NumericError(
            "degenerate selection point: an observed or missing cell has "
            "zero probability")
    a = o.sum()
    p_pop = tab.p_x if pop is None else float(pop)
    truth = tab.beta()
    frac = float(1.0 - a)
    # observed-fit conditionals p(x=1 | y, r=1)
    s_obs = np.array([o[1, y] / (o[0, y] + o[1, y]) for y in (0, 1)])

    if method == "cra":
        est = _beta_of(o)
    elif method == "standard-mi":
        est = _beta_of(_completed(o, m, s_obs))
    elif method in ("weighted-mi-marginal", "weighted-mi-conditional"):
        if method == "weighted-mi-marginal":
            p_base = float(o[1].sum() / a)
        else:
            q = tab.as_array().sum(axis=0)     # y margin over all rows
            p_base = float((q * s_obs).sum())  # model-predicted p(x=1)
        p_req = (p_pop - p_base * a) / (1.0 - a)
        if not 0.0 <= p_req <= 1.0:
            raise NumericError(
                f"required proportion {p_req:.6g} outside [0, 1]")
        w1 = p_req / p_base
        w0 = (1.0 - p_req) / (1.0 - p_base)
        ow = o * np.array([[w0], [w1]])
        s_w = np.array([ow[1, y] / (ow[0, y] + ow[1, y]) for y in (0, 1)])
        est = _beta_of(_completed(o, m, s_w))
    else:  # calibrated-mi
        theta = _theta_of(o)
        p_x_obs = np.array([1.0 - o[1].sum() / a, o[1].sum() / a])
        required = required_missing_dist(
            np.array([1.0 - p_pop, p_pop]), p_x_obs, float(a))
        q_mis = (m[0] + m[1]) / (1.0 - a)      # y distribution | r=0
        eta = theta[0] + theta[1] * np.arange(2.0)
        sol = solve_offset_binary(eta, float(required[1]),
                                  weights=q_mis, tol=1e-12)
        s_cal = expit(eta + sol.offsets[0])
        est = _beta_of(_completed(o, m, s_cal))

    return BiasResult(
        method=method,
        estimate=tuple(est),
        bias=tuple(est - truth),
        frac_missing=frac,
    )


def grid_axes(kind: str, n_points: int = 61, lo: float = -3.0,
              hi: float = 3.0, alpha0_fixed: float = 0.5):
    """Default grid over the active selection coefficients.

    M1 varies alpha0 alone; M2 varies (alpha0, alpha_y); M3 varies
    (alpha0, alpha_x); M4 holds alpha0 at ``alpha0_fixed`` and varies
    (alpha_x, alpha_y).
    """
    g = np.linspace(lo, hi, n_points)
    if kind == "M1":
        return [(float(a0), 0.0, 0.0) for a0 in g]
    if kind == "M2":
        return [(float(a0), 0.0, float(ay)) for a0 in g for ay in g]
    if kind == "M3":
        return [(float(a0), float(ax), 0.0) for a0 in g for ax in g]
    if kind == "M4":
        return [(alpha0_fixed, float(ax), float(ay)) for ax in g for ay in g]
    raise DataError(f"unknown mechanism '{kind}'")


def bias_grid(tab: PopulationTable, kind: str, methods,
              axes=None, pop: float | None = None) -> list[dict]:
    """Evaluate analytic bias over a grid of selection coefficients.

    Returns one flat dict per (grid point, method) with the alphas, the
    missing fraction, and the bias in both coefficients.
    """
    if axes is None:
        axes = grid_axes(kind)
    rows = []
    for a0, ax, ay in axes:
        model = SelectionModel(
            kind, a0,
            ax if kind in ("M3", "M4") else 0.0,
            ay if kind in ("M2", "M4") else 0.0,
        )
        for meth in methods:
            res = analytic_bias(tab, model, meth, pop=pop)
            rows.append({
                "mechanism": kind,
                "method": meth,
                "alpha0": a0,
                "alpha_x": ax,
                "alpha_y": ay,
                "frac_missing": res.frac_missing,
                "bias_b0": res.bias[0],
                "bias_bx": res.bias[1],
            })
    return rows

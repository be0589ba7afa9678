"""Observation (response) models used to make covariates incomplete.

Four nested logistic selection mechanisms control the probability that
the target covariate x is observed, given x itself and a binary outcome
y:

    M1  logit p(r=1) = a0                  (missing completely at random)
    M2  logit p(r=1) = a0 + ay*y           (missing at random given y)
    M3  logit p(r=1) = a0 + ax*x           (missing not at random)
    M4  logit p(r=1) = a0 + ax*x + ay*y    (missing not at random)

x enters by its level code, so mechanisms that use ax require a binary
target; likewise ay requires a binary outcome.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataError, SolverError
from .tabular import MISSING, Dataset

MECHANISMS = ("M1", "M2", "M3", "M4")


@dataclass(frozen=True)
class SelectionModel:
    """One of the four mechanisms with its active coefficients."""

    kind: str
    alpha0: float
    alpha_x: float = 0.0
    alpha_y: float = 0.0

    def __post_init__(self):
        if self.kind not in MECHANISMS:
            raise DataError(f"unknown mechanism '{self.kind}'")
        if self.kind in ("M1", "M2") and self.alpha_x != 0.0:
            raise DataError(f"{self.kind} does not use alpha_x")
        if self.kind in ("M1", "M3") and self.alpha_y != 0.0:
            raise DataError(f"{self.kind} does not use alpha_y")

    @property
    def uses_x(self) -> bool:
        return self.kind in ("M3", "M4")

    @property
    def uses_y(self) -> bool:
        return self.kind in ("M2", "M4")


def observe_prob(model: SelectionModel, x, y=None):
    """P(r=1 | x, y) under the mechanism; broadcasts over arrays."""
    eta = np.asarray(x, dtype=float) * 0.0 + model.alpha0
    if model.uses_x:
        eta = eta + model.alpha_x * np.asarray(x, dtype=float)
    if model.uses_y:
        if y is None:
            raise DataError(f"{model.kind} needs outcome values")
        eta = eta + model.alpha_y * np.asarray(y, dtype=float)
    return expit(eta)


def ampute(ds: Dataset, target: str, model: SelectionModel,
           rng: np.random.Generator, outcome: str | None = None) -> Dataset:
    """Return a copy of ``ds`` with target cells deleted stochastically.

    Each row keeps its target value with probability
    ``observe_prob(model, x, y)``; otherwise the cell becomes MISSING.

    ``outcome`` names the y variable and is required for M2/M4.
    """
    tvar = ds.var(target)
    x = ds.codes(target)
    if (x == MISSING).any():
        raise DataError(f"target '{target}' must be complete before amputation")
    if model.uses_x and tvar.n_levels != 2:
        raise DataError(
            f"{model.kind} uses alpha_x, which needs a binary target; "
            f"'{target}' has {tvar.n_levels} levels"
        )
    y = None
    if model.uses_y:
        if outcome is None:
            raise DataError(f"{model.kind} needs an outcome variable")
        yvar = ds.var(outcome)
        if yvar.n_levels != 2:
            raise DataError(
                f"{model.kind} uses alpha_y, which needs a binary outcome; "
                f"'{outcome}' has {yvar.n_levels} levels"
            )
        y = ds.codes(outcome)
        if (y == MISSING).any():
            raise DataError(f"outcome '{outcome}' must be complete")
    p = observe_prob(model, x, y)
    keep = rng.random(ds.n_rows) < p
    new_codes = np.where(keep, x, MISSING).astype(np.int32)
    return ds.replace_codes(target, new_codes)


def expected_missing_fraction(model: SelectionModel, joint: np.ndarray) -> float:
    """1 - E[p(r=1)] over a joint (x, y) cell-probability table."""
    joint = np.asarray(joint, dtype=float)
    x = np.arange(joint.shape[0])[:, None]
    y = np.arange(joint.shape[1])[None, :]
    pr = expit(
        model.alpha0
        + (model.alpha_x if model.uses_x else 0.0) * x
        + (model.alpha_y if model.uses_y else 0.0) * y
    )
    return float(1.0 - (joint * pr).sum())


def solve_alpha0(kind: str, target_missing: float, joint: np.ndarray,
                 alpha_x: float = 0.0, alpha_y: float = 0.0,
                 tol: float = 1e-10) -> float:
    """Intercept giving the requested overall missing fraction.

    The expected missing fraction is strictly decreasing in alpha0, so a
    bisection on an expanding bracket always lands on the unique root.

    Parameters
    ----------
    kind : mechanism name
    target_missing : fraction in (0, 1)
    joint : (levels_x, levels_y) cell probabilities of the full data
    alpha_x, alpha_y : slope values for the mechanism
    """
    if not 0.0 < target_missing < 1.0:
        raise DataError("target missing fraction must lie in (0, 1)")

    def frac(a0):
        m = SelectionModel(
            kind, a0,
            alpha_x if kind in ("M3", "M4") else 0.0,
            alpha_y if kind in ("M2", "M4") else 0.0,
        )
        return expected_missing_fraction(m, joint)

    lo, hi = -20.0, 20.0
    while frac(lo) < target_missing:        # frac decreasing in a0
        lo *= 2.0
        if lo < -700.0:
            raise SolverError("alpha0 bracket exhausted (low side)")
    while frac(hi) > target_missing:
        hi *= 2.0
        if hi > 700.0:
            raise SolverError("alpha0 bracket exhausted (high side)")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = frac(mid)
        if abs(f - target_missing) <= tol:
            return mid
        if f > target_missing:
            lo = mid
        else:
            hi = mid
    raise SolverError("alpha0 bisection did not converge")

"""Calibrated intercept offsets for imputation models.

Given a reference distribution for an incomplete categorical variable,
the distribution observed among complete records, and the observation
rate, the law of total probability fixes what the distribution among the
missing records must be:

    p(x=j | r=0) = (p_pop_j - p(x=j | r=1) * p(r=1)) / p(r=0)

The solvers then find per-level intercept offsets for the imputation
model so that its average predicted distribution over the missing rows
matches that required distribution. For a binary target this is a single
monotone equation solved by bisection; for J levels it is a system of
J-1 equations solved by damped Newton with a coordinate-bisection
fallback.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataError, FeasibilityError, SolverError
from .glm import _softmax_with_base

RESIDUAL_TOL = 1e-10
BRACKET_START = 20.0
BRACKET_LIMIT = 700.0
NEWTON_MAX_ITER = 100
SWEEP_MAX = 50


@dataclass(frozen=True)
class OffsetSolution:
    """Solved offsets with solver diagnostics."""

    offsets: np.ndarray      # (J-1,) per non-base level
    residual: float          # max |F| at the solution
    iterations: int
    method: str              # "bisection", "newton" or "coordinate"


def required_missing_dist(pop, observed, p_observed) -> np.ndarray:
    """Distribution the missing records must follow to hit ``pop``.

    Parameters
    ----------
    pop : (J,) reference distribution for the whole population
    observed : (J,) distribution among complete records
    p_observed : observation rate p(r=1), strictly inside (0, 1)

    Returns
    -------
    (J,) required distribution of the target among missing records.

    Raises
    ------
    FeasibilityError
        If any required proportion falls outside [0, 1]; no clamping is
        done, since a violated partition identity means the reference
        distribution cannot be reached by any imputation of the missing
        cells.
    """
    pop = np.asarray(pop, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if pop.shape != observed.shape or pop.ndim != 1:
        raise DataError("pop and observed must be 1-d with equal length")
    for nm, v in (("pop", pop), ("observed", observed)):
        if (v < 0).any() or (v > 1).any():
            raise DataError(f"{nm} proportions must lie in [0, 1]")
        if abs(v.sum() - 1.0) > 1e-8:
            raise DataError(f"{nm} proportions must sum to 1")
    if not 0.0 < p_observed < 1.0:
        raise DataError("p_observed must lie strictly inside (0, 1)")
    req = (pop - observed * p_observed) / (1.0 - p_observed)
    tol = 1e-12
    bad = np.flatnonzero((req < -tol) | (req > 1.0 + tol))
    if bad.size:
        j = int(bad[0])
        raise FeasibilityError(
            f"required proportion {req[j]:.6g} for level {j} falls outside "
            f"[0, 1]; the reference distribution is unreachable at "
            f"p(r=1) = {p_observed:.6g}"
        )
    return np.clip(req, 0.0, 1.0)


def _weighted_mean(values, weights):
    if weights is None:
        return values.mean(axis=0)
    w = np.asarray(weights, dtype=float)
    return (w[:, None] * values if values.ndim == 2 else w * values).sum(
        axis=0) / w.sum()


def solve_offset_binary(eta_mis, target, weights=None,
                        tol=RESIDUAL_TOL) -> OffsetSolution:
    """Offset d with mean expit(eta + d) over missing rows equal to target.

    ``eta_mis`` holds the imputation-model linear predictors of the
    missing rows; ``weights`` optionally weights rows (used by the
    expectation-level bias calculations). The mean is strictly increasing
    in d, so bisection on an expanding bracket is exact and safe.
    """
    eta = np.asarray(eta_mis, dtype=float).ravel()
    if eta.size == 0:
        raise DataError("no missing rows to calibrate on")
    if not 0.0 < target < 1.0:
        raise FeasibilityError(
            f"target proportion {target:.6g} must lie strictly inside (0, 1)"
        )

    def f(d):
        return float(_weighted_mean(expit(eta + d), weights)) - target

    lo, hi = -BRACKET_START, BRACKET_START
    while f(lo) > 0.0:
        lo *= 2.0
        if lo < -BRACKET_LIMIT:
            raise SolverError("offset bracket exhausted (low side)")
    while f(hi) < 0.0:
        hi *= 2.0
        if hi > BRACKET_LIMIT:
            raise SolverError("offset bracket exhausted (high side)")
    for it in range(1, 201):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol:
            return OffsetSolution(np.array([mid]), abs(fm), it, "bisection")
        if fm < 0.0:
            lo = mid
        else:
            hi = mid
    raise SolverError(
        f"bisection stalled; residual {abs(fm):.3e} above {tol:.1e}"
    )


def _mean_probs(eta, d, weights):
    """Average softmax distribution over rows at offset d; (J,) vector."""
    return _weighted_mean(_softmax_with_base(eta + d[None, :]), weights)


def solve_offset_categorical(eta_mis, target, weights=None, tol=RESIDUAL_TOL,
                             max_iter=NEWTON_MAX_ITER) -> OffsetSolution:
    """Per-level offsets matching a required multi-level distribution.

    Parameters
    ----------
    eta_mis : (n_mis, J-1) linear predictors of the missing rows
    target : (J-1,) required proportions for the non-base levels
    weights : optional row weights

    Solves F_j(d) = mean_j(d) - target_j = 0 by damped Newton using the
    analytic softmax Jacobian, starting from zero, with backtracking on
    ||F||. If Newton fails to reach the tolerance, falls back to cyclic
    coordinate bisection (each F_j is strictly increasing in its own
    offset).
    """
    eta = np.atleast_2d(np.asarray(eta_mis, dtype=float))
    if eta.shape[0] == 0:
        raise DataError("no missing rows to calibrate on")
    t = np.asarray(target, dtype=float).ravel()
    if t.shape != (eta.shape[1],):
        raise DataError(
            f"target length {t.shape} does not match {eta.shape[1]} "
            "non-base levels"
        )
    if (t <= 0.0).any() or t.sum() >= 1.0:
        raise FeasibilityError(
            "each required proportion must be strictly positive and their "
            "sum strictly below 1"
        )
    n_eq = eta.shape[1]

    def F(d):
        return _mean_probs(eta, d, weights)[1:] - t

    d = np.zeros(n_eq)
    fd = F(d)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(fd)) <= tol:
            return OffsetSolution(d, float(np.max(np.abs(fd))), it, "newton")
        P = _softmax_with_base(eta + d[None, :])
        if weights is None:
            w = np.full(eta.shape[0], 1.0 / eta.shape[0])
        else:
            w = np.asarray(weights, dtype=float)
            w = w / w.sum()
        s = P[:, 1:]
        # J[j,k] = d mean_j / d offset_k = E[s_j (1[j=k] - s_k)]
        jac = -(s * w[:, None]).T @ s
        jac[np.diag_indices(n_eq)] += (s * w[:, None]).sum(axis=0)
        try:
            step = np.linalg.solve(jac, -fd)
        except np.linalg.LinAlgError:
            break
        lam, norm0 = 1.0, np.linalg.norm(fd)
        improved = False
        for _ in range(31):
            cand = d + lam * step
            fc = F(cand)
            if np.linalg.norm(fc) < norm0:
                d, fd = cand, fc
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
    else:
        if np.max(np.abs(fd)) <= tol:
            return OffsetSolution(d, float(np.max(np.abs(fd))), max_iter,
                                  "newton")
    return _coordinate_fallback(eta, t, weights, d, tol)


def _coordinate_fallback(eta, t, weights, d0, tol) -> OffsetSolution:
    """Cyclic per-coordinate bisection; each equation is monotone."""
    d = d0.copy()
    for sweep in range(1, SWEEP_MAX + 1):
        for j in range(len(t)):
            def fj(v):
                dd = d.copy()
                dd[j] = v
                return _mean_probs(eta, dd, weights)[j + 1] - t[j]

            lo, hi = d[j] - BRACKET_START, d[j] + BRACKET_START
            while fj(lo) > 0.0:
                lo = 2.0 * lo - d[j]
                if lo < -BRACKET_LIMIT:
                    raise SolverError("offset bracket exhausted (low side)")
            while fj(hi) < 0.0:
                hi = 2.0 * hi - d[j]
                if hi > BRACKET_LIMIT:
                    raise SolverError("offset bracket exhausted (high side)")
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                fm = fj(mid)
                if abs(fm) <= 0.1 * tol:
                    break
                if fm < 0.0:
                    lo = mid
                else:
                    hi = mid
            d[j] = mid
        resid = np.max(np.abs(
            _mean_probs(eta, d, weights)[1:] - t))
        if resid <= tol:
            return OffsetSolution(d, float(resid), sweep, "coordinate")
    raise SolverError(
        f"coordinate sweeps stalled; residual {resid:.3e} above {tol:.1e}"
    )

"""Logistic and multinomial-logit fitting on categorical datasets.

Maximum likelihood via Newton-Raphson with step halving. Rows are
aggregated into unique (covariate pattern, outcome) cells before
iterating, which leaves the likelihood, score and information identical
while making fits on large datasets cheap.

The binary and multinomial solvers are written separately: the binary
path works on the scalar logit, the multinomial path on the stacked
(J-1)-equation system with base level 0. At J=2 the two must agree to
numerical precision, which is checked in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DataError, FitError, SeparationError
from .tabular import MISSING, Dataset

MAX_ITER = 100
MAX_HALVINGS = 30
SCORE_TOL = 1e-8
LL_REL_TOL = 1e-12
SEPARATION_BOUND = 15.0


@dataclass(frozen=True)
class DesignSpec:
    """Model formula: outcome regressed on dummy-coded predictors.

    An intercept is always included. Each predictor contributes one
    indicator column per non-base level; the base level defaults to the
    variable's first label and can be overridden via ``base_levels``.
    """

    outcome: str
    predictors: tuple[str, ...] = ()
    base_levels: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        object.__setattr__(self, "base_levels", tuple(self.base_levels))
        if self.outcome in self.predictors:
            raise DataError(
                f"outcome '{self.outcome}' cannot also be a predictor"
            )

    def base_level(self, name: str) -> int:
        for nm, lev in self.base_levels:
            if nm == name:
                return lev
        return 0


@dataclass
class GlmFit:
    """A converged fit plus everything needed to predict and draw."""

    spec: DesignSpec
    family: str
    outcome_levels: tuple[str, ...]
    param_names: tuple[str, ...]
    coef: np.ndarray          # (J-1, p)
    cov: np.ndarray           # ((J-1)p, (J-1)p), inverse observed information
    offset: np.ndarray        # (J-1,) fixed per-equation intercept offsets
    n_obs: int
    total_weight: float
    weighted: bool
    iterations: int
    max_score: float
    loglik: float

    @property
    def n_levels(self) -> int:
        return len(self.outcome_levels)

    @property
    def coef_flat(self) -> np.ndarray:
        return self.coef.ravel()

    @property
    def df_complete(self) -> int:
        """Complete-data residual degrees of freedom, n - p."""
        return self.n_obs - len(self.param_names)

    def coef_names(self) -> tuple[str, ...]:
        if self.family == "binary":
            return self.param_names
        return tuple(
            f"{self.outcome_levels[j + 1]}:{nm}"
            for j in range(self.n_levels - 1)
            for nm in self.param_names
        )

    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


def _design_from_codes(variables, spec: DesignSpec, code_mat: np.ndarray):
    """Design matrix (intercept + dummies) from a matrix of level codes."""
    n = code_mat.shape[0]
    cols = [np.ones(n)]
    names = ["intercept"]
    for j, v in enumerate(variables):
        base = spec.base_level(v.name)
        if not 0 <= base < v.n_levels:
            raise DataError(
                f"base level {base} out of range for '{v.name}'"
            )
        for lev in range(v.n_levels):
            if lev == base:
                continue
            cols.append((code_mat[:, j] == lev).astype(float))
            names.append(f"{v.name}[{v.levels[lev]}]")
    return np.column_stack(cols), tuple(names)


def design_matrix(ds: Dataset, spec: DesignSpec, rows=None):
    """Design matrix and column names for the given rows (no aggregation)."""
    if rows is None:
        rows = np.arange(ds.n_rows)
    else:
        rows = np.asarray(rows)
    code_mat = np.column_stack(
        [ds.codes(nm)[rows] for nm in spec.predictors]
    ) if spec.predictors else np.empty((len(rows), 0), dtype=np.int32)
    for j, nm in enumerate(spec.predictors):
        if (code_mat[:, j] == MISSING).any():
            raise DataError(
                f"predictor '{nm}' has missing cells in the requested rows"
            )
    pred_vars = [ds.var(nm) for nm in spec.predictors]
    return _design_from_codes(pred_vars, spec, code_mat)


def _prepare(ds: Dataset, spec: DesignSpec, rows, weights):
    """Aggregate fitting rows into unique (pattern, outcome) cells."""
    if rows is None:
        rows = np.arange(ds.n_rows)
    else:
        rows = np.asarray(rows)
    if len(rows) == 0:
        raise DataError("no rows to fit on")
    y = ds.codes(spec.outcome)[rows]
    if (y == MISSING).any():
        raise DataError(
            f"outcome '{spec.outcome}' has missing cells in the fitting rows"
        )
    pred_vars = [ds.var(nm) for nm in spec.predictors]
    pred_cols = []
    for nm in spec.predictors:
        c = ds.codes(nm)[rows]
        if (c == MISSING).any():
            raise DataError(
                f"predictor '{nm}' has missing cells in the fitting rows"
            )
        pred_cols.append(c)
    if weights is None:
        w = np.ones(len(rows))
        weighted = False
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(rows),):
            raise DataError(
                f"weights length {w.shape} does not match {len(rows)} rows"
            )
        if not np.all(np.isfinite(w)) or (w <= 0).any():
            raise DataError("weights must be strictly positive and finite")
        weighted = True
    key = np.column_stack(pred_cols + [y])
    cells, inv = np.unique(key, axis=0, return_inverse=True)
    w_cell = np.bincount(inv, weights=w, minlength=len(cells))
    X, names = _design_from_codes(pred_vars, spec, cells[:, :-1])
    return X, cells[:, -1].astype(np.int64), w_cell, names, len(rows), weighted


def _check_separation(b_flat, flat_names):
    worst = int(np.argmax(np.abs(b_flat)))
    if abs(b_flat[worst]) > SEPARATION_BOUND:
        raise SeparationError(
            f"separation suspected: |coefficient| for "
            f"'{flat_names[worst]}' exceeds {SEPARATION_BOUND:g}"
        )


def _newton(b0, f_ll, f_score, f_info, flat_names):
    b = b0.copy()
    ll = f_ll(b)
    if not np.isfinite(ll):
        raise FitError("log-likelihood not finite at the starting point")
    for it in range(MAX_ITER + 1):
        g = f_score(b)
        gmax = float(np.max(np.abs(g)))
        _check_separation(b, flat_names)
        if gmax <= SCORE_TOL:
            return b, it, gmax, ll
        if it == MAX_ITER:
            raise FitError(
                f"no convergence in {MAX_ITER} iterations "
                f"(max |score| = {gmax:.3e})"
            )
        H = f_info(b)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            raise FitError(
                "singular information matrix; collinear predictors or an "
                "empty outcome cell"
            ) from None
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            bn = b + lam * step
            lln = f_ll(bn)
            if np.isfinite(lln) and lln >= ll:
                break
            lam *= 0.5
        else:
            raise FitError("step halving failed to improve the log-likelihood")
        rel = abs(lln - ll) / (abs(ll) + 1e-300)
        b, ll = bn, lln
        if rel <= LL_REL_TOL:
            g = f_score(b)
            _check_separation(b, flat_names)
            return b, it + 1, float(np.max(np.abs(g))), ll
    raise AssertionError("unreachable")


def _binary_funcs(X, y, w, off):
    y1 = (y == 1).astype(float)

    def f_ll(b):
        eta = X @ b + off
        return float(w @ (y1 * eta - np.logaddexp(0.0, eta)))

    def f_score(b):
        p = expit(X @ b + off)
        return X.T @ (w * (y1 - p))

    def f_info(b):
        p = expit(X @ b + off)
        d = w * p * (1.0 - p)
        return (X * d[:, None]).T @ X

    return f_ll, f_score, f_info


def _softmax_with_base(eta):
    """Probabilities over J levels given (n, J-1) predictors; base eta 0."""
    z = np.concatenate([np.zeros((eta.shape[0], 1)), eta], axis=1)
    z -= z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def _multinomial_funcs(X, y, w, off, n_eq):
    n, p = X.shape
    ind = np.zeros((n, n_eq))
    for j in range(n_eq):
        ind[:, j] = y == j + 1

    def probs(b):
        B = b.reshape(n_eq, p)
        return _softmax_with_base(X @ B.T + off[None, :])

    def f_ll(b):
        P = probs(b)
        picked = P[np.arange(n), y]
        return float(w @ np.log(np.maximum(picked, 1e-300)))

    def f_score(b):
        P = probs(b)
        resid = w[:, None] * (ind - P[:, 1:])
        return (X.T @ resid).T.ravel()   # equation-major

    def f_info(b):
        P = probs(b)
        H = np.empty((n_eq * p, n_eq * p))
        for j in range(n_eq):
            for k in range(j, n_eq):
                pj, pk = P[:, j + 1], P[:, k + 1]
                d = w * (pj * ((j == k) - pk))
                blk = (X * d[:, None]).T @ X
                H[j * p:(j + 1) * p, k * p:(k + 1) * p] = blk
                if k != j:
                    H[k * p:(k + 1) * p, j * p:(j + 1) * p] = blk
        return H

    return f_ll, f_score, f_info


def _flat_names(family, outcome_levels, param_names):
    if family == "binary":
        return tuple(param_names)
    return tuple(
        f"{outcome_levels[j + 1]}:{nm}"
        for j in range(len(outcome_levels) - 1)
        for nm in param_names
    )


def _normalize_offset(offset, n_eq):
    if offset is None:
        return np.zeros(n_eq)
    off = np.atleast_1d(np.asarray(offset, dtype=float))
    if off.shape == (1,) and n_eq > 1:
        off = np.full(n_eq, off[0])
    if off.shape != (n_eq,):
        raise DataError(
            f"offset must be a scalar or length-{n_eq} vector"
        )
    return off


def fit(ds: Dataset, spec: DesignSpec, *, rows=None, weights=None,
        offset=None, family: str = "auto") -> GlmFit:
    """Fit the outcome on dummy-coded predictors by maximum likelihood.

    Parameters
    ----------
    ds : Dataset
    spec : DesignSpec
    rows : array of row indices, optional
        Fitting subset; defaults to all rows. Outcome and predictors must
        be fully observed on these rows.
    weights : array, optional
        Strictly positive case weights aligned with ``rows``.
    offset : float or array, optional
        Fixed per-equation intercept offset added to every linear
        predictor (scalar for the binary model).
    family : {"auto", "binary", "multinomial"}
        "auto" picks binary for two-level outcomes.

    Returns
    -------
    GlmFit

    Raises
    ------
    FitError
        Non-convergence or a singular information matrix.
    SeparationError
        Any |coefficient| beyond 15 at a convergence check, which for
        categorical data indicates a (near-)empty cell.
    """
    out_var = ds.var(spec.outcome)
    J = out_var.n_levels
    if family == "auto":
        family = "binary" if J == 2 else "multinomial"
    if family == "binary" and J != 2:
        raise DataError(
            f"binary family needs a two-level outcome; '{spec.outcome}' "
            f"has {J}"
        )
    n_eq = J - 1
    off = _normalize_offset(offset, n_eq)
    X, y, w, names, n_rows, weighted = _prepare(ds, spec, rows, weights)
    p = X.shape[1]
    flat_names = _flat_names(family, out_var.levels, names)

    if family == "binary":
        f_ll, f_score, f_info = _binary_funcs(X, y, w, off[0])
        b0 = np.zeros(p)
    else:
        f_ll, f_score, f_info = _multinomial_funcs(X, y, w, off, n_eq)
        b0 = np.zeros(n_eq * p)

    b, iters, gmax, ll = _newton(b0, f_ll, f_score, f_info, flat_names)
    H = f_info(b)
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        raise FitError("observed information is singular at the optimum") from None
    cov = (cov + cov.T) / 2.0

    return GlmFit(
        spec=spec,
        family=family,
        outcome_levels=out_var.levels,
        param_names=names,
        coef=b.reshape(n_eq, p),
        cov=cov,
        offset=off,
        n_obs=n_rows,
        total_weight=float(w.sum()),
        weighted=weighted,
        iterations=iters,
        max_score=gmax,
        loglik=ll,
    )


def loglik(ds, spec, coef, *, rows=None, weights=None, offset=None,
           family: str = "auto"):
    """Log-likelihood at an arbitrary coefficient value (test hook)."""
    f_ll, _ = _eval_funcs(ds, spec, rows, weights, offset, family)
    return f_ll(np.asarray(coef, dtype=float).ravel())


def score(ds, spec, coef, *, rows=None, weights=None, offset=None,
          family: str = "auto"):
    """Score vector at an arbitrary coefficient value (test hook)."""
    _, f_score = _eval_funcs(ds, spec, rows, weights, offset, family)
    return f_score(np.asarray(coef, dtype=float).ravel())


def _eval_funcs(ds, spec, rows, weights, offset, family):
    out_var = ds.var(spec.outcome)
    J = out_var.n_levels
    if family == "auto":
        family = "binary" if J == 2 else "multinomial"
    n_eq = J - 1
    off = _normalize_offset(offset, n_eq)
    X, y, w, _, _, _ = _prepare(ds, spec, rows, weights)
    if family == "binary":
        f_ll, f_score, _ = _binary_funcs(X, y, w, off[0])
    else:
        f_ll, f_score, _ = _multinomial_funcs(X, y, w, off, n_eq)
    return f_ll, f_score


def _psd_factor(a: np.ndarray) -> np.ndarray:
    """Factor L with L L^T = a for a PSD matrix; exact zero passes through."""
    if not np.any(a):
        return np.zeros_like(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(a + 1e-12 * np.eye(len(a)))
    except np.linalg.LinAlgError:
        raise FitError("covariance is not positive semi-definite") from None


def draw_params(fit: GlmFit, rng: np.random.Generator) -> np.ndarray:
    """One multivariate-normal posterior draw of the coefficients.

    Returns an array shaped like ``fit.coef``. A zero covariance returns
    the point estimate exactly.
    """
    L = _psd_factor(fit.cov)
    z = rng.standard_normal(fit.coef.size)
    return (fit.coef_flat + L @ z).reshape(fit.coef.shape)


def predict_prob(fit: GlmFit, ds: Dataset, rows=None, coef=None,
                 extra_offset=None) -> np.ndarray:
    """Per-level outcome probabilities for the given rows.

    Parameters
    ----------
    fit : GlmFit
    ds : Dataset
        Dataset to predict on; predictor variables must match the fit.
    rows : array of row indices, optional
    coef : array, optional
        Coefficients to use instead of the fitted ones (e.g. a posterior
        draw from :func:`draw_params`).
    extra_offset : float or array, optional
        Additional per-equation intercept offset, added on top of the
        offset the model was fitted with.

    Returns
    -------
    (len(rows), J) array of probabilities; rows sum to one.
    """
    n_eq = fit.n_levels - 1
    B = fit.coef if coef is None else np.asarray(coef, dtype=float).reshape(
        n_eq, len(fit.param_names))
    X, _ = design_matrix(ds, fit.spec, rows)
    off = fit.offset + _normalize_offset(
        extra_offset if extra_offset is not None else 0.0, n_eq)
    eta = X @ B.T + off[None, :]
    if fit.family == "binary":
        p1 = expit(eta[:, 0])
        return np.column_stack([1.0 - p1, p1])
    return _softmax_with_base(eta)

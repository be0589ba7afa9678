"""Imputation strategies for one incomplete categorical covariate.

Baselines: complete-record analysis, single-level fill, and standard
multiple imputation from a model fitted on complete records (missing at
random). Two families use an external reference distribution for the
incomplete variable:

* calibrated MI: per imputation, draw model parameters and nuisance
  proportions, derive the distribution the missing records must follow
  for the completed data to match the reference, solve intercept offsets
  that achieve it, and impute from the offset model;
* weighted MI: reweight the complete records in the imputation model so
  its predictions tilt toward that required distribution, either from
  the observed marginal distribution ("marginal") or from model-predicted
  proportions ("conditional").

All stochastic entry points take a seed and give bit-identical output
for identical inputs; imputations use independent child streams so the
result does not depend on evaluation order.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import glm
from .calibration import (required_missing_dist, solve_offset_binary,
                          solve_offset_categorical)
from .errors import DataError, FeasibilityError
from .pooling import PooledEstimate, pool_fits
from .tabular import MISSING, Dataset

PROB_FLOOR = 1e-6
MAX_DRAW_ATTEMPTS = 100

STOCHASTIC_METHODS = (
    "standard-mi",
    "calibrated-mi",
    "weighted-mi-marginal",
    "weighted-mi-conditional",
)
METHODS = ("cra", "single") + STOCHASTIC_METHODS


@dataclass(frozen=True)
class PopulationDistribution:
    """Reference distribution of the incomplete variable.

    ``n_source`` is None for a census-quality (exact) reference; a
    positive integer marks proportions estimated from an external sample
    of that size, in which case calibrated imputation draws the reference
    proportions per imputation to propagate that uncertainty.
    """

    variable: str
    levels: tuple[str, ...]
    proportions: tuple[float, ...]
    n_source: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(
            self, "proportions",
            tuple(float(p) for p in self.proportions))
        p = np.asarray(self.proportions)
        if len(self.levels) != len(self.proportions):
            raise DataError("levels and proportions must align")
        if (p < 0).any() or (p > 1).any():
            raise DataError("reference proportions must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-9:
            raise DataError(
                f"reference proportions sum to {p.sum():.12g}, expected 1")
        if self.n_source is not None and self.n_source < 2:
            raise DataError("external sample size must be at least 2")

    @classmethod
    def from_partial(cls, variable, levels, given: dict,
                     n_source=None) -> "PopulationDistribution":
        """Build from label->proportion pairs; one label may be omitted
        and receives the complement."""
        levels = tuple(levels)
        unknown = set(given) - set(levels)
        if unknown:
            raise DataError(
                f"unknown level(s) {sorted(unknown)} for '{variable}'")
        missing = [lab for lab in levels if lab not in given]
        props = dict(given)
        if len(missing) == 1:
            rest = 1.0 - sum(given.values())
            if rest < -1e-9:
                raise DataError("stated proportions already exceed 1")
            props[missing[0]] = max(rest, 0.0)
        elif missing:
            raise DataError(
                f"proportions missing for {missing}; at most one level "
                "may be left to the complement")
        return cls(variable, levels,
                   tuple(props[lab] for lab in levels), n_source)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.proportions, dtype=float)

    @property
    def estimated(self) -> bool:
        return self.n_source is not None


@dataclass(frozen=True)
class ImputationDiagnostics:
    """Per-imputation nuisance draws and solver output."""

    imputation: int
    p_r: float | None = None
    observed_dist: tuple | None = None
    population_dist: tuple | None = None
    required_dist: tuple | None = None
    offsets: tuple | None = None
    solver_method: str | None = None
    solver_iterations: int | None = None
    solver_residual: float | None = None
    level_weights: tuple | None = None
    theta_solve: tuple | None = None
    theta_impute: tuple | None = None
    draw_attempts: int | None = None


@dataclass(frozen=True)
class ImputationResult:
    """M completed datasets plus the draws that produced them."""

    method: str
    target: str
    predictors: tuple[str, ...]
    m: int
    datasets: tuple[Dataset, ...]
    diagnostics: tuple[ImputationDiagnostics, ...]
    seed: object = None

    def completed(self, i: int) -> Dataset:
        return self.datasets[i]


# -- deterministic baselines ----------------------------------------------

def complete_records(ds: Dataset, target: str) -> Dataset:
    """Drop every row whose target cell is missing."""
    ds.var(target)
    return ds.subset(ds.observed_rows(target))


def single_impute(ds: Dataset, target: str, level) -> Dataset:
    """Fill every missing target cell with one fixed level."""
    v = ds.var(target)
    code = v.code_of(level) if isinstance(level, str) else int(level)
    if not 0 <= code < v.n_levels:
        raise DataError(f"level code {code} out of range for '{target}'")
    codes = ds.codes(target).copy()
    codes[codes == MISSING] = code
    return ds.replace_codes(target, codes)


# -- shared machinery -------------------------------------------------------

def _task(ds: Dataset, target: str, predictors):
    predictors = tuple(predictors)
    tvar = ds.var(target)
    if target in predictors:
        raise DataError("target cannot be its own predictor")
    if not predictors:
        raise DataError("imputation model needs at least one predictor")
    for nm in predictors:
        if not ds.is_complete(nm):
            raise DataError(
                f"predictor '{nm}' has missing cells; only the target "
                "may be incomplete")
    obs = ds.observed_rows(target)
    mis = ds.missing_rows(target)
    if len(obs) == 0:
        raise DataError(f"target '{target}' has no observed cells")
    counts = ds.level_counts(target, obs)
    for j, c in enumerate(counts):
        if c == 0:
            raise DataError(
                f"target level '{tvar.levels[j]}' has no observed records; "
                "its conditional distribution cannot be estimated")
    return tvar, predictors, obs, mis


def _child_streams(seed, m):
    ss = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    return [np.random.default_rng(c) for c in ss.spawn(m)]


def _draw_categories(probs: np.ndarray, rng: np.random.Generator):
    cum = np.cumsum(probs, axis=1)
    u = rng.random((probs.shape[0], 1))
    return np.clip((u >= cum).sum(axis=1), 0, probs.shape[1] - 1)


def _fill(ds, target, mis, codes_mis):
    codes = ds.codes(target).copy()
    codes[mis] = codes_mis
    return ds.replace_codes(target, codes)


def _copies_result(ds, method, target, predictors, m, seed):
    # nothing to impute: M identical completed datasets by contract
    diags = tuple(ImputationDiagnostics(imputation=i + 1) for i in range(m))
    return ImputationResult(method, target, tuple(predictors), m,
                            tuple(ds for _ in range(m)), diags, seed)


def _truncate(p: float) -> float:
    return float(min(max(p, PROB_FLOOR), 1.0 - PROB_FLOOR))


def _draw_proportion(rng, p_hat, n_den) -> float:
    sd = math.sqrt(p_hat * (1.0 - p_hat) / n_den)
    return _truncate(rng.normal(p_hat, sd))


def _draw_distribution(rng, p_hat: np.ndarray, n_den) -> np.ndarray:
    """Draw a distribution around p_hat with binomial-type variances.

    Two levels: draw the non-base proportion, complement the base. More
    levels: independent normal draws per level, truncated to (0, 1) and
    renormalized to sum to one.
    """
    if len(p_hat) == 2:
        d = _draw_proportion(rng, float(p_hat[1]), n_den)
        return np.array([1.0 - d, d])
    draws = np.array([
        _truncate(rng.normal(p, math.sqrt(p * (1.0 - p) / n_den)))
        for p in p_hat
    ])
    return draws / draws.sum()


def _check_pop(pop: PopulationDistribution, tvar):
    if pop.variable != tvar.name:
        raise DataError(
            f"reference distribution is for '{pop.variable}', "
            f"not target '{tvar.name}'")
    if pop.levels != tvar.levels:
        raise DataError(
            f"reference levels {pop.levels} do not match target levels "
            f"{tvar.levels}")


def _spec_for(ds, target, predictors):
    return glm.DesignSpec(outcome=target, predictors=tuple(predictors))


# -- multiple imputation methods -------------------------------------------

def impute_standard(ds: Dataset, target: str, predictors, m: int,
                    seed) -> ImputationResult:
    """Standard MI: fit target | predictors on complete records, then per
    imputation draw parameters and sample the missing cells."""
    tvar, predictors, obs, mis = _task(ds, target, predictors)
    if m < 1:
        raise DataError("m must be at least 1")
    if len(mis) == 0:
        return _copies_result(ds, "standard-mi", target, predictors, m, seed)
    spec = _spec_for(ds, target, predictors)
    fit = glm.fit(ds, spec, rows=obs)
    datasets, diags = [], []
    for i, rng in enumerate(_child_streams(seed, m)):
        theta = glm.draw_params(fit, rng)
        probs = glm.predict_prob(fit, ds, rows=mis, coef=theta)
        datasets.append(_fill(ds, target, mis, _draw_categories(probs, rng)))
        diags.append(ImputationDiagnostics(
            imputation=i + 1,
            theta_impute=tuple(theta.ravel()),
        ))
    return ImputationResult("standard-mi", target, predictors, m,
                            tuple(datasets), tuple(diags), seed)


def impute_calibrated(ds: Dataset, target: str, predictors, m: int,
                      pop: PopulationDistribution, seed) -> ImputationResult:
    """Calibrated MI against a reference distribution.

    Per imputation: draw imputation-model parameters and the observation
    rate / observed-distribution nuisances (reference proportions too,
    when they come from an external sample); derive the required
    missing-record distribution from the partition identity; solve the
    per-level intercept offsets; draw fresh parameters for the imputation
    stage; sample missing cells from the offset model.

    The post-solve refit required by the procedure leaves the
    complete-record likelihood untouched (the offset attaches only to
    rows being imputed), so its MLE equals the original fit; the fresh
    imputation-stage draw therefore comes from the same fit, with the
    offset added at prediction time.

    The nuisance draws live on the region where the implied
    missing-record distribution is a probability vector; draws landing
    outside it are rejected and retaken (a truncated proposal). When the
    point estimates themselves admit no feasible missing-record
    distribution every attempt fails and the feasibility error
    propagates.
    """
    tvar, predictors, obs, mis = _task(ds, target, predictors)
    if m < 1:
        raise DataError("m must be at least 1")
    _check_pop(pop, tvar)
    if len(mis) == 0:
        return _copies_result(ds, "calibrated-mi", target, predictors, m,
                              seed)
    n = ds.n_rows
    n_obs = len(obs)
    p_hat_r = n_obs / n
    p_hat_x = ds.level_proportions(target, obs)
    spec = _spec_for(ds, target, predictors)
    fit = glm.fit(ds, spec, rows=obs)
    x_mis, _ = glm.design_matrix(ds, spec, mis)
    binary = tvar.n_levels == 2

    datasets, diags = [], []
    for i, rng in enumerate(_child_streams(seed, m)):
        theta_tilde = glm.draw_params(fit, rng)
        for attempt in range(1, MAX_DRAW_ATTEMPTS + 1):
            p_r = _draw_proportion(rng, p_hat_r, n)
            p_x = _draw_distribution(rng, p_hat_x, n)
            if pop.estimated:
                pop_m = _draw_distribution(rng, pop.as_array(), pop.n_source)
            else:
                pop_m = pop.as_array()
            try:
                required = required_missing_dist(pop_m, p_x, p_r)
            except FeasibilityError:
                if attempt == MAX_DRAW_ATTEMPTS:
                    raise
                continue
            break
        eta = x_mis @ theta_tilde.T
        if binary:
            sol = solve_offset_binary(eta[:, 0], float(required[1]))
        else:
            sol = solve_offset_categorical(eta, required[1:])
        theta_dot = glm.draw_params(fit, rng)
        probs = glm.predict_prob(fit, ds, rows=mis, coef=theta_dot,
                                 extra_offset=sol.offsets)
        datasets.append(_fill(ds, target, mis, _draw_categories(probs, rng)))
        diags.append(ImputationDiagnostics(
            imputation=i + 1,
            p_r=p_r,
            observed_dist=tuple(p_x),
            population_dist=tuple(pop_m),
            required_dist=tuple(required),
            offsets=tuple(sol.offsets),
            solver_method=sol.method,
            solver_iterations=sol.iterations,
            solver_residual=sol.residual,
            theta_solve=tuple(theta_tilde.ravel()),
            theta_impute=tuple(theta_dot.ravel()),
            draw_attempts=attempt,
        ))
    return ImputationResult("calibrated-mi", target, predictors, m,
                            tuple(datasets), tuple(diags), seed)


def marginal_weights(pop: np.ndarray, p_obs: np.ndarray, n: int,
                     n_obs: int) -> np.ndarray:
    """Per-level complete-record weights from the observed marginal.

    The required missing-record count share for level j is
    (pop_j * n - p_obs_j * n_obs) / n_mis and the weight is its ratio to
    the observed proportion, w_j = p_req_j / p_obs_j.
    """
    n_mis = n - n_obs
    if n_mis <= 0:
        raise DataError("no missing records; weights are undefined")
    req = (np.asarray(pop, float) * n
           - np.asarray(p_obs, float) * n_obs) / n_mis
    bad = np.flatnonzero((req < -1e-12) | (req > 1.0 + 1e-12))
    if bad.size:
        j = int(bad[0])
        raise FeasibilityError(
            f"required proportion {req[j]:.6g} for level {j} falls outside "
            "[0, 1]; the reference distribution is unreachable by weighting")
    req = np.clip(req, 0.0, 1.0)
    if ((req > 0) & (np.asarray(p_obs) <= 0)).any():
        raise DataError(
            "a level with zero observed share has nonzero required "
            "proportion")
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(np.asarray(p_obs) > 0, req / np.asarray(p_obs), 1.0)
    if (w <= 0).any():
        raise FeasibilityError(
            "weighting needs strictly positive required proportions on "
            "every observed level")
    return w


def post_stratification_weights(p_obs, pop) -> np.ndarray:
    """Naive contrast: w_j = pop_j / p_obs_j, ignoring that only missing
    records need reweighting. Kept for comparison, not used in any
    imputation path."""
    return np.asarray(pop, float) / np.asarray(p_obs, float)


def impute_weighted(ds: Dataset, target: str, predictors, m: int,
                    pop: PopulationDistribution, seed,
                    mode: str = "marginal") -> ImputationResult:
    """Weighted MI: tilt the imputation model toward the reference.

    mode "marginal": weights from the observed target distribution, fixed
    across imputations. mode "conditional": weights from model-predicted
    proportions averaged over every row's covariates, recomputed per
    imputation from a parameter draw of the unweighted fit.

    Weights enter only the imputation-model fit; analyses of the
    completed data stay unweighted.
    """
    if mode not in ("marginal", "conditional"):
        raise DataError(f"unknown weighting mode '{mode}'")
    method = f"weighted-mi-{mode}"
    tvar, predictors, obs, mis = _task(ds, target, predictors)
    if m < 1:
        raise DataError("m must be at least 1")
    _check_pop(pop, tvar)
    if len(mis) == 0:
        return _copies_result(ds, method, target, predictors, m, seed)
    n, n_obs = ds.n_rows, len(obs)
    spec = _spec_for(ds, target, predictors)
    fit0 = glm.fit(ds, spec, rows=obs)
    obs_codes = ds.codes(target)[obs]
    pop_arr = pop.as_array()

    datasets, diags = [], []
    if mode == "marginal":
        p_obs = ds.level_proportions(target, obs)
        w_level = marginal_weights(pop_arr, p_obs, n, n_obs)
        wfit = glm.fit(ds, spec, rows=obs, weights=w_level[obs_codes])
        for i, rng in enumerate(_child_streams(seed, m)):
            theta = glm.draw_params(wfit, rng)
            probs = glm.predict_prob(wfit, ds, rows=mis, coef=theta)
            datasets.append(
                _fill(ds, target, mis, _draw_categories(probs, rng)))
            diags.append(ImputationDiagnostics(
                imputation=i + 1,
                level_weights=tuple(w_level),
                theta_impute=tuple(theta.ravel()),
            ))
    else:
        for i, rng in enumerate(_child_streams(seed, m)):
            theta_tilde = glm.draw_params(fit0, rng)
            p_pred = glm.predict_prob(fit0, ds, coef=theta_tilde).mean(axis=0)
            w_level = marginal_weights(pop_arr, p_pred, n, n_obs)
            wfit = glm.fit(ds, spec, rows=obs, weights=w_level[obs_codes])
            theta = glm.draw_params(wfit, rng)
            probs = glm.predict_prob(wfit, ds, rows=mis, coef=theta)
            datasets.append(
                _fill(ds, target, mis, _draw_categories(probs, rng)))
            diags.append(ImputationDiagnostics(
                imputation=i + 1,
                level_weights=tuple(w_level),
                theta_solve=tuple(theta_tilde.ravel()),
                theta_impute=tuple(theta.ravel()),
            ))
    return ImputationResult(method, target, predictors, m,
                            tuple(datasets), tuple(diags), seed)


def analyze_pooled(result: ImputationResult, analysis_spec: glm.DesignSpec,
                   conf: float = 0.95) -> list[PooledEstimate]:
    """Fit the analysis model on each completed dataset and pool."""
    fits = [glm.fit(d, analysis_spec) for d in result.datasets]
    return pool_fits(fits, conf=conf)


def write_stacked_csv(result: ImputationResult, path) -> None:
    """All completed datasets stacked with a leading 1-based
    ``_imputation`` column."""
    names = result.datasets[0].names
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("_imputation",) + names)
        for i, d in enumerate(result.datasets, start=1):
            decoded = [d.decoded_column(nm) for nm in names]
            for r in range(d.n_rows):
                writer.writerow(
                    [i] + ["" if col[r] is None else col[r]
                           for col in decoded])

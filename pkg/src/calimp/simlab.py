"""Monte Carlo evaluation of the imputation methods.

A scenario fixes the data-generating model, one selection mechanism, a
method list and sizes (n, repetitions, imputations). Every repetition
draws a fresh dataset, deletes target cells through the mechanism, runs
each method on the same incomplete data, and records per-parameter
estimates, variances and interval bounds. Performance measures follow
the usual simulation-study conventions (bias, empirical SE, average
model SE, coverage) with Monte Carlo standard errors for each.

Repetition r of a scenario draws all randomness from substreams keyed by
(seed, r, purpose), so results are bit-identical for a given seed
regardless of thread count or which other methods run alongside.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit
from scipy.stats import norm

try:
    import tomllib
except ModuleNotFoundError:                       # Python 3.10
    import tomli as tomllib

from . import glm
from .errors import CalimpError, ConfigError, SimulationError
from .impute import (PopulationDistribution, analyze_pooled,
                     complete_records, impute_calibrated, impute_standard,
                     impute_weighted)
from .selection import SelectionModel, ampute
from .tabular import Dataset, Variable

Z975 = float(norm.ppf(0.975))

PROFILES = {
    "desk": {"n": 2000, "reps": 500, "m": 10},
    "full": {"n": 5000, "reps": 2000, "m": 50},
}

# fixed stream ids so adding or removing methods never shifts the draws
# of another method
_METHOD_STREAM = {
    "full-data": 10,
    "cra": 11,
    "standard-mi": 12,
    "calibrated-mi": 13,
    "weighted-mi-marginal": 14,
    "weighted-mi-conditional": 15,
}
SIM_METHODS = tuple(_METHOD_STREAM)


@dataclass(frozen=True)
class GeneratorConfig:
    """x ~ Bernoulli(p_x); logit p(y=1 | x) = beta0 + beta_x * x."""

    p_x: float = 0.7
    beta0: float = float(np.log(0.5))
    beta_x: float = float(np.log(1.5))

    def truth(self) -> dict[str, float]:
        return {"intercept": self.beta0, "x[1]": self.beta_x}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    mechanism: SelectionModel
    methods: tuple[str, ...]
    n: int
    reps: int
    m: int
    seed: int
    generator: GeneratorConfig = GeneratorConfig()
    external_n: int | None = None      # None: exact census reference
    max_failure_rate: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        for meth in self.methods:
            if meth not in _METHOD_STREAM:
                raise ConfigError(f"unknown method '{meth}'")
        if self.n < 10 or self.reps < 1 or self.m < 1:
            raise ConfigError("n, reps and m must be positive (n >= 10)")


class RepRecord(NamedTuple):
    scenario: str
    rep: int
    method: str
    parameter: str
    estimate: float
    variance: float
    ci_lo: float
    ci_hi: float
    between: float | None      # between-imputation variance, MI only


class FailureRecord(NamedTuple):
    scenario: str
    rep: int
    method: str
    error: str


@dataclass
class RawResults:
    scenario: str
    rows: list
    failures: list
    truth: dict


def _stream(seed: int, rep: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(rep, purpose)))


def generate_dataset(gen: GeneratorConfig, n: int,
                     rng: np.random.Generator) -> Dataset:
    x = (rng.random(n) < gen.p_x).astype(np.int32)
    py = expit(gen.beta0 + gen.beta_x * x)
    y = (rng.random(n) < py).astype(np.int32)
    return Dataset(
        (Variable("x", ("0", "1"), role="target"),
         Variable("y", ("0", "1"), role="outcome")),
        {"x": x, "y": y},
    )


_ANALYSIS = glm.DesignSpec(outcome="y", predictors=("x",))


def _wald_rows(cfg, rep, method, fit) -> list:
    names = fit.coef_names()
    se = fit.se()
    out = []
    for j, nm in enumerate(names):
        est = float(fit.coef_flat[j])
        out.append(RepRecord(
            cfg.name, rep, method, nm, est, float(se[j] ** 2),
            est - Z975 * se[j], est + Z975 * se[j], None))
    return out


def _pooled_rows(cfg, rep, method, pooled) -> list:
    return [
        RepRecord(cfg.name, rep, method, p.name, p.estimate, p.total,
                  p.ci_lo, p.ci_hi, p.between)
        for p in pooled
    ]


def _run_rep(cfg: ScenarioConfig, rep: int):
    rows, fails = [], []
    ds_full = generate_dataset(cfg.generator, cfg.n,
                               _stream(cfg.seed, rep, 0))
    if cfg.external_n is None:
        p_pop = cfg.generator.p_x
        n_source = None
    else:
        ext = _stream(cfg.seed, rep, 1)
        hits = int((ext.random(cfg.external_n) < cfg.generator.p_x).sum())
        p_pop = hits / cfg.external_n
        n_source = cfg.external_n
    pop = PopulationDistribution("x", ("0", "1"), (1.0 - p_pop, p_pop),
                                 n_source=n_source)
    ds_mis = ampute(ds_full, "x", cfg.mechanism,
                    _stream(cfg.seed, rep, 2), outcome="y")
    for method in cfg.methods:
        mseed = np.random.SeedSequence(
            cfg.seed, spawn_key=(rep, _METHOD_STREAM[method]))
        try:
            if method == "full-data":
                rows += _wald_rows(cfg, rep, method,
                                   glm.fit(ds_full, _ANALYSIS))
            elif method == "cra":
                rows += _wald_rows(cfg, rep, method,
                                   glm.fit(complete_records(ds_mis, "x"),
                                           _ANALYSIS))
            else:
                if method == "standard-mi":
                    res = impute_standard(ds_mis, "x", ("y",), cfg.m, mseed)
                elif method == "calibrated-mi":
                    res = impute_calibrated(ds_mis, "x", ("y",), cfg.m, pop,
                                            mseed)
                else:
                    mode = method.rsplit("-", 1)[1]
                    res = impute_weighted(ds_mis, "x", ("y",), cfg.m, pop,
                                          mseed, mode=mode)
                rows += _pooled_rows(cfg, rep, method,
                                     analyze_pooled(res, _ANALYSIS))
        except (CalimpError, np.linalg.LinAlgError) as exc:
            fails.append(FailureRecord(
                cfg.name, rep, method, f"{type(exc).__name__}: {exc}"))
    return rows, fails


def _rep_worker(args):
    return _run_rep(*args)


def run_scenario(cfg: ScenarioConfig, threads: int | None = 1) -> RawResults:
    """Run all repetitions; raises if any method fails too often.

    ``threads`` > 1 distributes repetitions over processes; output is
    identical to the serial run.
    """
    if threads is None:
        threads = os.cpu_count() or 1
    jobs = [(cfg, rep) for rep in range(1, cfg.reps + 1)]
    if threads <= 1 or cfg.reps < 4:
        results = [_run_rep(cfg, rep) for _, rep in jobs]
    else:
        chunk = max(1, cfg.reps // (threads * 8))
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_rep_worker, jobs, chunksize=chunk))
    rows, failures = [], []
    for r, f in results:
        rows += r
        failures += f
    for method in cfg.methods:
        bad = sum(1 for f in failures if f.method == method)
        if bad > cfg.max_failure_rate * cfg.reps:
            raise SimulationError(
                f"method '{method}' failed in {bad}/{cfg.reps} repetitions "
                f"(> {cfg.max_failure_rate:.0%} allowed); first error: "
                f"{next(f.error for f in failures if f.method == method)}")
    return RawResults(cfg.name, rows, failures, cfg.generator.truth())


def summarize(results: RawResults) -> list[dict]:
    """Per (method, parameter): bias, empirical SE, average model SE and
    coverage, each with its Monte Carlo standard error."""
    groups: dict[tuple, list] = {}
    for r in results.rows:
        groups.setdefault((r.method, r.parameter), []).append(r)
    out = []
    for (method, param), rs in groups.items():
        truth = results.truth[param]
        est = np.array([r.estimate for r in rs])
        var = np.array([r.variance for r in rs])
        s = len(rs)
        covered = np.array(
            [r.ci_lo <= truth <= r.ci_hi for r in rs], dtype=float)
        emp = float(est.std(ddof=1)) if s > 1 else 0.0
        vbar = float(var.mean())
        modse = math.sqrt(vbar)
        cov = float(covered.mean())
        out.append({
            "scenario": results.scenario,
            "method": method,
            "parameter": param,
            "n_reps": s,
            "truth": truth,
            "bias": float(est.mean() - truth),
            "bias_mcse": emp / math.sqrt(s),
            "empse": emp,
            "empse_mcse": emp / math.sqrt(2.0 * (s - 1)) if s > 1 else 0.0,
            "modse": modse,
            "modse_mcse": (
                math.sqrt(float(var.var(ddof=1)) / (4.0 * s * vbar))
                if s > 1 and vbar > 0 else 0.0),
            "coverage": cov,
            "coverage_mcse": math.sqrt(cov * (1.0 - cov) / s),
        })
    return out


# -- study configs and file output ------------------------------------------

@dataclass
class StudyConfig:
    scenarios: list
    threads: int | None = 1


def load_study(path, profile: str | None = None) -> StudyConfig:
    """Parse a TOML study file.

    Layout: a ``[study]`` table (seed, optional profile), an optional
    ``[generator]`` table (p_x, beta0, beta_x) and one or more
    ``[[scenario]]`` tables (name, mechanism, alpha0, alpha_x, alpha_y,
    methods, population = "exact" | external sample size, plus optional
    n / reps / m / seed overrides).
    """
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    study = data.get("study", {})
    prof = profile or study.get("profile", "desk")
    if prof not in PROFILES:
        raise ConfigError(
            f"unknown profile '{prof}'; choose from {sorted(PROFILES)}")
    sizes = PROFILES[prof]
    gen_tab = data.get("generator", {})
    try:
        gen = GeneratorConfig(
            p_x=float(gen_tab.get("p_x", 0.7)),
            beta0=float(gen_tab.get("beta0", np.log(0.5))),
            beta_x=float(gen_tab.get("beta_x", np.log(1.5))),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad [generator] table: {exc}") from None
    scenarios = []
    entries = data.get("scenario", [])
    if not entries:
        raise ConfigError("config declares no [[scenario]] tables")
    for i, sc in enumerate(entries):
        try:
            name = sc.get("name", f"scenario-{i + 1}")
            seed = sc.get("seed", study.get("seed"))
            if seed is None:
                raise ConfigError(
                    f"scenario '{name}': no seed (set [study].seed or "
                    "scenario.seed)")
            mech = SelectionModel(
                sc["mechanism"],
                float(sc.get("alpha0", 0.0)),
                float(sc.get("alpha_x", 0.0)),
                float(sc.get("alpha_y", 0.0)),
            )
            population = sc.get("population", "exact")
            if population == "exact":
                external_n = None
            elif isinstance(population, int) and population > 1:
                external_n = population
            else:
                raise ConfigError(
                    f"scenario '{name}': population must be \"exact\" or "
                    "an external sample size")
            scenarios.append(ScenarioConfig(
                name=name,
                mechanism=mech,
                methods=tuple(sc.get("methods", (
                    "full-data", "cra", "standard-mi", "calibrated-mi"))),
                n=int(sc.get("n", sizes["n"])),
                reps=int(sc.get("reps", sizes["reps"])),
                m=int(sc.get("m", sizes["m"])),
                seed=int(seed),
                generator=gen,
                external_n=external_n,
            ))
        except KeyError as exc:
            raise ConfigError(
                f"scenario {i + 1}: missing required key {exc}") from None
        except CalimpError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario {i + 1}: {exc}") from None
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ConfigError("scenario names must be unique")
    return StudyConfig(scenarios=scenarios)


RAW_FIELDS = ("scenario", "rep", "method", "parameter", "estimate",
              "variance", "ci_lo", "ci_hi", "between")


def write_raw_csv(all_results, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RAW_FIELDS)
        for res in all_results:
            for r in res.rows:
                writer.writerow([
                    r.scenario, r.rep, r.method, r.parameter,
                    repr(r.estimate), repr(r.variance),
                    repr(r.ci_lo), repr(r.ci_hi),
                    "" if r.between is None else repr(r.between),
                ])


def write_summary_csv(summaries, path) -> None:
    if not summaries:
        raise ConfigError("nothing to summarize")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summaries[0]),
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(summaries)


def write_summary_json(summaries, all_results, path) -> None:
    payload = {
        "summaries": summaries,
        "failures": [f._asdict() for res in all_results
                     for f in res.failures],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")

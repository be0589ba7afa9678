"""Combining repeated-imputation analyses.

Point estimates are averaged; variance splits into within- and
between-imputation parts,

    W = mean(var_m),  B = sample variance of estimates,  T = W + (1+1/M) B

and intervals use a t reference with the Barnard-Rubin small-sample
degrees of freedom (which needs the complete-data degrees of freedom,
n - p, of the analysis model). The fraction of missing information uses
the same adjusted df:

    r = (1+1/M) B / W,   FMI = (r + 2/(df+3)) / (r + 1)

so with B = 0 it degenerates to the small constant 2/(df+3) rather than
exactly zero. Relative efficiency versus infinite imputations is
1 / (1 + FMI/M). The Monte Carlo error of the pooled point estimate is
sqrt(B/M), flagged when it exceeds a tenth of the pooled SE.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy import stats

from .errors import DataError


@dataclass(frozen=True)
class PooledEstimate:
    """Pooled summary for one coefficient."""

    name: str
    m: int
    estimate: float
    within: float
    between: float
    total: float
    se: float
    df: float
    ci_lo: float
    ci_hi: float
    fmi: float
    re: float
    mcse: float
    mcse_ok: bool


def _barnard_rubin_df(m, between, total, df_com):
    lam = 0.0 if total <= 0.0 else (1.0 + 1.0 / m) * between / total
    lam = min(max(lam, 0.0), 1.0)
    if not math.isfinite(df_com):
        # large-sample limit of the small-sample adjustment
        nu_obs = math.inf if lam < 1.0 else 0.0
    else:
        nu_obs = (df_com + 1.0) / (df_com + 3.0) * df_com * (1.0 - lam)
    if lam <= 0.0:
        return nu_obs
    nu_old = (m - 1.0) / lam ** 2
    if nu_obs <= 0.0:
        return 0.0
    return 1.0 / (1.0 / nu_old + 1.0 / nu_obs)


def _fmi(m, between, within, df):
    if between <= 0.0:
        r = 0.0
    elif within <= 0.0:
        return 1.0
    else:
        r = (1.0 + 1.0 / m) * between / within
    return (r + 2.0 / (df + 3.0)) / (r + 1.0)


def _t_quantile(df, conf):
    q = 0.5 + conf / 2.0
    if not math.isfinite(df):
        return float(stats.norm.ppf(q))
    return float(stats.t.ppf(q, df))


def pool(estimates, variances, df_com, names=None,
         conf: float = 0.95) -> list[PooledEstimate]:
    """Rubin's rules over M imputation-specific analyses.

    Parameters
    ----------
    estimates : (M, p) array
        Coefficient estimates per imputation.
    variances : (M, p) array
        Squared standard errors per imputation.
    df_com : int
        Complete-data residual degrees of freedom of the analysis model.
    names : sequence of p coefficient names, optional
    conf : two-sided confidence level

    Returns
    -------
    list of PooledEstimate, one per coefficient.
    """
    q = np.atleast_2d(np.asarray(estimates, dtype=float))
    v = np.atleast_2d(np.asarray(variances, dtype=float))
    if q.shape != v.shape:
        raise DataError("estimates and variances must have equal shape")
    m, p = q.shape
    if m < 2:
        raise DataError(f"pooling needs at least 2 imputations, got {m}")
    if (v < 0).any() or not np.all(np.isfinite(q)) or not np.all(np.isfinite(v)):
        raise DataError("estimates/variances must be finite, variances >= 0")
    if df_com <= 0:
        raise DataError("complete-data degrees of freedom must be positive")
    if names is None:
        names = tuple(f"b{j}" for j in range(p))
    names = tuple(names)
    if len(names) != p:
        raise DataError(f"{len(names)} names for {p} coefficients")

    out = []
    qbar = q.mean(axis=0)
    within = v.mean(axis=0)
    between = q.var(axis=0, ddof=1)
    for j in range(p):
        w, b = float(within[j]), float(between[j])
        t_var = w + (1.0 + 1.0 / m) * b
        df = _barnard_rubin_df(m, b, t_var, df_com)
        fmi = _fmi(m, b, w, df)
        se = math.sqrt(t_var)
        tq = _t_quantile(df, conf)
        mcse = math.sqrt(b / m)
        out.append(PooledEstimate(
            name=names[j],
            m=m,
            estimate=float(qbar[j]),
            within=w,
            between=b,
            total=t_var,
            se=se,
            df=df,
            ci_lo=float(qbar[j]) - tq * se,
            ci_hi=float(qbar[j]) + tq * se,
            fmi=fmi,
            re=1.0 / (1.0 + fmi / m),
            mcse=mcse,
            mcse_ok=bool(mcse <= 0.1 * se) if se > 0 else True,
        ))
    return out


def pool_fits(fits, conf: float = 0.95) -> list[PooledEstimate]:
    """Pool a list of fitted analysis models (see :mod:`calimp.glm`).

    All fits must share the coefficient layout; the complete-data df is
    taken from the first fit.
    """
    if len(fits) < 2:
        raise DataError("pooling needs at least 2 fits")
    names = fits[0].coef_names()
    for f in fits[1:]:
        if f.coef_names() != names:
            raise DataError("fits have mismatched coefficient layouts")
    est = np.vstack([f.coef_flat for f in fits])
    var = np.vstack([np.diag(f.cov) for f in fits])
    return pool(est, var, fits[0].df_complete, names=names, conf=conf)


def fmi_jackknife_mcse(estimates, variances, df_com) -> np.ndarray:
    """Leave-one-imputation-out jackknife SE of the FMI, per coefficient.

    Needs M >= 3 so every leave-one-out subset still pools.
    """
    q = np.atleast_2d(np.asarray(estimates, dtype=float))
    v = np.atleast_2d(np.asarray(variances, dtype=float))
    m, p = q.shape
    if m < 3:
        raise DataError("jackknife over imputations needs M >= 3")
    mask = ~np.eye(m, dtype=bool)
    out = np.empty(p)
    for j in range(p):
        loo = np.empty(m)
        for i in range(m):
            qi, vi = q[mask[i], j], v[mask[i], j]
            b = qi.var(ddof=1)
            w = vi.mean()
            t_var = w + (1.0 + 1.0 / (m - 1)) * b
            df = _barnard_rubin_df(m - 1, b, t_var, df_com)
            loo[i] = _fmi(m - 1, b, w, df)
        out[j] = math.sqrt((m - 1) / m * ((loo - loo.mean()) ** 2).sum())
    return out


def to_rows(pooled) -> list[dict]:
    """Flat dict rows (odds-ratio scale included) for CSV/JSON export."""
    rows = []
    for p in pooled:
        d = asdict(p)
        d["odds_ratio"] = math.exp(p.estimate)
        d["or_ci_lo"] = math.exp(p.ci_lo)
        d["or_ci_hi"] = math.exp(p.ci_hi)
        rows.append(d)
    return rows


def write_pooled_csv(pooled, path) -> None:
    rows = to_rows(pooled)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]),
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def write_pooled_json(pooled, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_rows(pooled), fh, indent=2)
        fh.write("\n")

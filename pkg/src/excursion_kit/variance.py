"""Standard errors and confidence intervals from influence values.

Three standard errors are produced for every estimate: the row-level
influence-function SE, the same SE with the n/(n-p) small-sample factor, and a
subject-clustered sandwich SE with optional HC-style inflation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConfigurationError, DataError, DegenerateClusterError
from .estimators import EstimateReport

ADJUSTMENTS = ("none", "HC2-like", "HC3-like")
CRITICALS = ("normal", "t")


def canonical_adjustment(name: str) -> str:
    key = str(name).lower().replace("_", "-")
    table = {"none": "none", "hc0": "none", "hc2": "HC2-like", "hc2-like": "HC2-like",
             "hc3": "HC3-like", "hc3-like": "HC3-like"}
    if key not in table:
        raise ConfigurationError(f"unknown cluster adjustment {name!r}; expected one of {ADJUSTMENTS}")
    return table[key]


@dataclass(frozen=True)
class InferenceResult:
    tau_hat: float
    se_naive: float
    se_corrected: float
    se_cluster: float
    ci_lo: float
    ci_hi: float
    level: float = 0.95
    critical: str = "normal"
    df: float = math.inf
    p_dim: int = 1
    se_kind: str = "cluster"
    adjustment: str = "none"
    n_clusters: int = 0
    ci_normal: tuple = ()
    ci_t: tuple = ()

    def to_dict(self) -> dict:
        return {"tau_hat": self.tau_hat, "se_naive": self.se_naive, "se_corrected": self.se_corrected,
                "se_cluster": self.se_cluster, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi, "level": self.level,
                "critical": self.critical, "df": None if math.isinf(self.df) else self.df,
                "p_dim": self.p_dim, "se_kind": self.se_kind, "adjustment": self.adjustment,
                "n_clusters": self.n_clusters, "ci_normal": list(self.ci_normal), "ci_t": list(self.ci_t)}


def if_variance(report: EstimateReport) -> float:
    """sqrt(V/N) with V the mean squared centered influence over N rows."""
    phi = np.asarray(report.influence, dtype=float)
    if phi.size < 2:
        raise DataError("influence-function variance needs at least 2 rows")
    centered = phi - phi.mean()
    return float(np.sqrt(np.mean(centered ** 2) / phi.size))


def cluster_factor(G: int, N: int, adjustment: str = "none") -> float:
    adjustment = canonical_adjustment(adjustment)
    base = G / (G - 1)
    if adjustment == "none":
        return base
    if adjustment == "HC2-like":
        return base * N / (N - 1)
    return base * base


def cluster_sandwich(report: EstimateReport, adjustment: str = "none") -> float:
    """Subject-level sandwich SE, sqrt(sum_g s_g^2 / N^2 * c)."""
    s = np.asarray(report.subject_scores, dtype=float)
    G = s.size
    if G < 2:
        raise DegenerateClusterError(f"cluster-robust SE needs at least 2 subjects, got {G}")
    N = report.n_rows
    return float(np.sqrt(np.sum(s ** 2) / N ** 2 * cluster_factor(G, N, adjustment)))


def small_sample_correct(se: float, n: int, p_dim: int = 1) -> float:
    """Scale an SE by sqrt(n / (n - p_dim))."""
    if n <= p_dim:
        raise ConfigurationError(f"small-sample correction needs n > p_dim (n={n}, p_dim={p_dim})")
    return float(se * math.sqrt(n / (n - p_dim)))


def critical_value(level: float = 0.95, critical: str = "normal", df: float | None = None) -> float:
    if not 0 < level < 1:
        raise ConfigurationError(f"confidence level must lie in (0, 1), got {level}")
    q = 0.5 + level / 2
    if critical == "normal":
        return float(stats.norm.ppf(q))
    if critical == "t":
        if df is None or df < 1:
            raise ConfigurationError("t critical values need df >= 1")
        return float(stats.t.ppf(q, df))
    raise ConfigurationError(f"unknown critical value {critical!r}; expected one of {CRITICALS}")


def confidence_interval(tau_hat: float, se: float, level: float = 0.95, critical: str = "normal",
                        df: float | None = None) -> tuple:
    if se < 0:
        raise ConfigurationError("standard error must be nonnegative")
    h = critical_value(level, critical, df) * se
    return float(tau_hat - h), float(tau_hat + h)


def infer(report: EstimateReport, level: float = 0.95, critical: str = "normal", adjustment: str = "none",
          p_dim: int = 1, se_kind: str = "cluster") -> InferenceResult:
    """All SEs for ``report`` plus an interval built from ``se_kind``.

    ``se_kind`` is one of 'naive', 'corrected' or 'cluster'; with a single
    subject the cluster SE is reported as NaN and 'cluster' falls back to
    'corrected'. The correction uses the subject count as n. Both the normal
    and t (df = G - 1) intervals are always attached.
    """
    adjustment = canonical_adjustment(adjustment)
    se_naive = if_variance(report)
    G = report.n_subjects
    n_corr = G if G > p_dim else report.n_rows
    se_corr = small_sample_correct(se_naive, n_corr, p_dim)
    se_cl = cluster_sandwich(report, adjustment) if G >= 2 else math.nan
    if se_kind == "cluster" and G < 2:
        se_kind = "corrected"
    chosen = {"naive": se_naive, "corrected": se_corr, "cluster": se_cl}.get(se_kind)
    if chosen is None:
        raise ConfigurationError(f"unknown se_kind {se_kind!r}; expected naive, corrected or cluster")
    df = float(G - 1) if G >= 2 else float(max(report.n_rows - p_dim, 1))
    ci_n = confidence_interval(report.tau_hat, chosen, level, "normal")
    ci_t = confidence_interval(report.tau_hat, chosen, level, "t", df)
    lo, hi = ci_t if critical == "t" else ci_n
    if critical not in CRITICALS:
        raise ConfigurationError(f"unknown critical value {critical!r}; expected one of {CRITICALS}")
    return InferenceResult(report.tau_hat, se_naive, se_corr, se_cl, lo, hi, level, critical,
                           df if critical == "t" else math.inf, p_dim, se_kind, adjustment, G, ci_n, ci_t)

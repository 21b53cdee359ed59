"""Per-decision, stabilized and truncated weights with summary diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import PanelDataset
from .errors import ConfigurationError, DataError
from .nuisance import NuisanceFits

SCHEMES = ("per-decision", "cumulative")

# Fixed-bound presets used by the truncation sensitivity sweep.
TABLE_PRESETS = ((0.01, 10.0), (0.05, 20.0), (0.1, 5.0))


@dataclass(frozen=True)
class FixedBounds:
    lower: float
    upper: float

    def __post_init__(self):
        if not (0 < self.lower < self.upper):
            raise ConfigurationError(f"fixed bounds need 0 < L < U, got ({self.lower}, {self.upper})")

    def label(self):
        return f"{self.lower:g},{self.upper:g}"


@dataclass(frozen=True)
class QuantileBounds:
    lower: float
    upper: float

    def __post_init__(self):
        if not (0 <= self.lower < self.upper <= 1):
            raise ConfigurationError(
                f"quantile bounds need 0 <= lo < hi <= 1, got ({self.lower}, {self.upper})")

    def label(self):
        return f"q:{self.lower:g},{self.upper:g}"


DEFAULT_BOUNDS = QuantileBounds(0.01, 0.99)
NO_TRUNCATION = FixedBounds(1e-12, 1e12)


def asymptotic_bounds(n: int, kappa: float = 0.5) -> FixedBounds:
    """Sample-size dependent bounds (n^-kappa, n^kappa)."""
    if n < 2 or kappa <= 0:
        raise ConfigurationError("asymptotic bounds need n >= 2 and kappa > 0")
    return FixedBounds(n ** -kappa, n ** kappa)


def parse_bounds(text) -> FixedBounds | QuantileBounds:
    """Parse ``'L,U'``, ``'q:lo,hi'`` or ``'none'``."""
    if isinstance(text, (FixedBounds, QuantileBounds)):
        return text
    if isinstance(text, (list, tuple)) and len(text) == 2:
        return FixedBounds(float(text[0]), float(text[1]))
    s = str(text).strip().lower()
    if s in ("none", "off"):
        return NO_TRUNCATION
    quantile = s.startswith("q:")
    body = s[2:] if quantile else s
    try:
        lo, hi = (float(v) for v in body.split(","))
    except ValueError:
        raise ConfigurationError(f"cannot parse truncation spec {text!r}; use 'L,U' or 'q:lo,hi'") from None
    return QuantileBounds(lo, hi) if quantile else FixedBounds(lo, hi)


@dataclass(frozen=True)
class WeightDiagnostics:
    mean_w: float
    sd_w: float
    cv_w: float
    max_w: float
    trunc_pct: float

    def to_dict(self):
        return {"mean_w": self.mean_w, "sd_w": self.sd_w, "cv_w": self.cv_w, "max_w": self.max_w,
                "trunc_pct": self.trunc_pct}


@dataclass(frozen=True)
class WeightSet:
    raw: np.ndarray
    stabilized: np.ndarray
    truncated: np.ndarray
    bounds: tuple
    scheme: str
    diagnostics: WeightDiagnostics
    operative: np.ndarray  # arm-specific inverse weight used by the estimators
    bounds_spec: str = ""

    @property
    def shrink(self):
        """Truncation factor truncated / stabilized (1 where untouched)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(self.stabilized > 0, self.truncated / self.stabilized, 1.0)
        return s


def _check_aligned(nuisance: NuisanceFits, panel: PanelDataset):
    n = int(panel.available.sum())
    if nuisance.n_rows != n:
        raise DataError(f"nuisance fits cover {nuisance.n_rows} rows; panel has {n} available rows")


def per_decision_weights(nuisance: NuisanceFits, panel: PanelDataset) -> np.ndarray:
    """Inverse probability of the arm actually received: A/p + (1-A)/(1-p)."""
    _check_aligned(nuisance, panel)
    A = panel.A[panel.available].astype(float)
    p = nuisance.p_hat
    return A / p + (1.0 - A) / (1.0 - p)


def stabilization_ratio(nuisance: NuisanceFits, panel: PanelDataset) -> np.ndarray:
    _check_aligned(nuisance, panel)
    A = panel.A[panel.available].astype(float)
    num = A * nuisance.p_tilde + (1.0 - A) * (1.0 - nuisance.p_tilde)
    den = A * nuisance.p_hat + (1.0 - A) * (1.0 - nuisance.p_hat)
    return num / den


def stabilized_weights(nuisance: NuisanceFits, panel: PanelDataset, scheme: str = "per-decision") -> np.ndarray:
    r = stabilization_ratio(nuisance, panel)
    if scheme == "per-decision":
        return r
    if scheme == "cumulative":
        _, starts = panel.available_subject_layout()
        return kernels.grouped_cumprod(r, starts)
    raise ConfigurationError(f"unknown weight scheme {scheme!r}; expected one of {SCHEMES}")


def resolve_bounds(stabilized, bounds_spec) -> tuple:
    spec = parse_bounds(bounds_spec)
    if isinstance(spec, FixedBounds):
        return spec.lower, spec.upper
    v = np.asarray(stabilized, dtype=float)
    if v.size == 0:
        raise DataError("cannot resolve quantile bounds of an empty weight vector")
    L, U = np.quantile(v, [spec.lower, spec.upper], method="linear")
    return float(L), float(U)


def truncate(stabilized, bounds_spec=DEFAULT_BOUNDS):
    """Clamp weights to [L, U]; returns ``(truncated, (L, U))``.

    Quantile specs resolve (L, U) from the empirical distribution with linear
    interpolation between order statistics. L == U is accepted only when the
    clamp is the identity (constant weights).
    """
    v = np.asarray(stabilized, dtype=float)
    L, U = resolve_bounds(v, bounds_spec)
    if L > U or (L == U and v.size and np.ptp(v) > 0):
        raise ConfigurationError(f"resolved truncation bounds are not ordered: L={L}, U={U}")
    out, _ = kernels.clamp(v, L, U)
    return out, (L, U)


def diagnostics(weights, trunc_pct: float) -> WeightDiagnostics:
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise DataError("weight diagnostics need a nonempty vector")
    mean = float(w.mean())
    sd = float(w.std(ddof=1)) if w.size > 1 else 0.0
    cv = sd / mean if mean != 0 else math.inf
    return WeightDiagnostics(mean, sd, cv, float(w.max()), float(trunc_pct))


def build_weights(nuisance: NuisanceFits, panel: PanelDataset, scheme: str = "per-decision",
                  bounds_spec=DEFAULT_BOUNDS) -> WeightSet:
    """Stabilize, truncate and summarize; also forms the operative inverse weights.

    The operative weight divides the truncated stabilized weight by the
    numerator probability of the received arm, so an untouched per-decision
    weight reduces exactly to 1/p_hat (or 1/(1-p_hat)).
    """
    raw = per_decision_weights(nuisance, panel)
    stab = stabilized_weights(nuisance, panel, scheme)
    spec = parse_bounds(bounds_spec)
    trunc, bounds = truncate(stab, spec)
    altered = int(np.count_nonzero((stab < bounds[0]) | (stab > bounds[1])))
    diag = diagnostics(trunc, altered / stab.size)
    A = panel.A[panel.available].astype(float)
    arm_num = A * nuisance.p_tilde + (1.0 - A) * (1.0 - nuisance.p_tilde)
    operative = trunc / arm_num
    return WeightSet(raw, stab, trunc, bounds, scheme, diag, operative, spec.label())

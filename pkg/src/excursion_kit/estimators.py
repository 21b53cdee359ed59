"""Point estimators of the marginal excursion effect.

Every estimator returns an :class:`EstimateReport` carrying the per-row
influence values (centered at zero) and their per-subject sums, which is all
the variance module needs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .data import PanelDataset, design_matrix
from .errors import ConfigurationError, DegenerateArmError
from .nuisance import NuisanceFits, outcome_delta_terms
from .weights import WeightDiagnostics, WeightSet

METHODS = ("IPW", "EMEE", "DR-EMEE", "DR-EMEE2")
DEGENERATE_SE = 1e-8

_ALIASES = {m.lower().replace("-", "").replace("_", ""): m for m in METHODS}


def canonical_method(name: str) -> str:
    """Map a user-supplied method name (any case, '-' or '_') to its canonical tag."""
    key = str(name).lower().replace("-", "").replace("_", "")
    if key not in _ALIASES:
        raise ConfigurationError(f"unknown method {name!r}; valid methods: {', '.join(METHODS)}")
    return _ALIASES[key]


@dataclass(frozen=True)
class EstimateReport:
    method: str
    tau_hat: float
    influence: np.ndarray
    subject_ids: list
    subject_scores: np.ndarray
    n_subjects: int
    n_rows: int
    weight_diag: Optional[WeightDiagnostics] = None
    config_echo: dict = field(default_factory=dict)
    warnings: tuple = ()

    def to_dict(self, include_influence: bool = False) -> dict:
        out = {"method": self.method, "tau_hat": self.tau_hat, "n_subjects": self.n_subjects,
               "n_rows": self.n_rows, "warnings": list(self.warnings), "config": self.config_echo}
        if self.weight_diag is not None:
            out.update(self.weight_diag.to_dict())
        if include_influence:
            out["influence"] = self.influence.tolist()
        return out


def _arm_arrays(panel: PanelDataset, nuisance: NuisanceFits):
    mask = panel.available
    if nuisance.n_rows != int(mask.sum()):
        raise ConfigurationError(
            f"nuisance fits cover {nuisance.n_rows} rows; panel has {int(mask.sum())} available rows")
    A = panel.A[mask].astype(float)
    Y = panel.Y[mask].astype(float)
    for arm in (1, 0):
        if not np.any(A == arm):
            raise DegenerateArmError(f"no available rows with A={arm}")
    return A, Y


def _report(method, panel, phi, tau, weights=None, echo=None, warnings=()):
    influence = phi - phi.mean()
    ids, starts = panel.available_subject_layout()
    scores = kernels.group_sums(influence, starts)
    warns = list(warnings)
    if influence.size > 1 and np.sqrt(np.mean(influence ** 2) / influence.size) < DEGENERATE_SE:
        warns.append("degenerate variance: influence values are (numerically) constant")
    return EstimateReport(method, float(tau), influence, list(ids), scores, len(ids), influence.size,
                          None if weights is None else weights.diagnostics, dict(echo or {}), tuple(warns))


def _echo(method, nuisance, weights=None):
    echo = {"method": method, "nuisance_source": nuisance.source, "nuisance": nuisance.spec.to_dict()}
    if weights is not None:
        echo.update(scheme=weights.scheme, trunc=weights.bounds_spec, bounds=list(weights.bounds))
    return echo


def estimate_ipw(panel: PanelDataset, nuisance: NuisanceFits, weights: WeightSet) -> EstimateReport:
    """Per-decision inverse probability weighting (Horvitz-Thompson form).

    ``tau_hat = mean(A w Y) - mean((1-A) w Y)`` with ``w`` the operative
    (stabilized, truncated, arm-specific) inverse weight.
    """
    A, Y = _arm_arrays(panel, nuisance)
    w = weights.operative
    phi = A * w * Y - (1.0 - A) * w * Y
    return _report("IPW", panel, phi, phi.mean(), weights, _echo("IPW", nuisance, weights))


def estimate_emee(panel: PanelDataset, nuisance: NuisanceFits) -> EstimateReport:
    """Regression (g-computation) estimator mean(m1_hat - m0_hat).

    The influence adds the first-order effect of estimating the arm-wise
    outcome coefficients, so its variance reflects the outcome fits rather
    than only the spread of the fitted differences.
    """
    if not nuisance.outcome_fitted:
        raise ConfigurationError("EMEE needs fitted outcome models; use nuisance mode 'fit' or 'crossfit:K'")
    _arm_arrays(panel, nuisance)
    diff = nuisance.m1_hat - nuisance.m0_hat
    tau = diff.mean()
    phi = diff + outcome_delta_terms(panel, nuisance)
    return _report("EMEE", panel, phi, tau, None, _echo("EMEE", nuisance))


def dr_terms(panel: PanelDataset, nuisance: NuisanceFits, weights: WeightSet) -> np.ndarray:
    """Per-row augmented values (m1 - m0) + A w (Y - m1) - (1-A) w (Y - m0)."""
    A, Y = _arm_arrays(panel, nuisance)
    w = weights.operative
    m1, m0 = nuisance.m1_hat, nuisance.m0_hat
    return (m1 - m0) + A * w * (Y - m1) - (1.0 - A) * w * (Y - m0)


def estimate_dr_emee(panel: PanelDataset, nuisance: NuisanceFits, weights: WeightSet) -> EstimateReport:
    """Doubly robust (augmented IPW) excursion effect.

    With no truncation the operative weight equals 1/p_hat for treated rows
    and 1/(1-p_hat) for control rows, i.e. textbook AIPW; truncation scales
    each residual by the factor truncated/stabilized.
    """
    phi = dr_terms(panel, nuisance, weights)
    return _report("DR-EMEE", panel, phi, phi.mean(), weights, _echo("DR-EMEE", nuisance, weights))


def score_basis(panel: PanelDataset, nuisance: NuisanceFits) -> np.ndarray:
    """Treatment-model scores (A - p_hat) * g(H), one column per design column."""
    A = panel.A[panel.available].astype(float)
    G = design_matrix(panel, nuisance.spec.treatment_columns)
    return G * (A - nuisance.p_hat)[:, None]


def project_out(phi: np.ndarray, basis: np.ndarray):
    """Least-squares residual of ``phi`` on ``basis`` (no extra intercept).

    Returns ``(residual, fitted, rank_deficient)``.
    """
    coef, _, rank, _ = np.linalg.lstsq(basis, phi, rcond=None)
    fitted = basis @ coef
    return phi - fitted, fitted, rank < basis.shape[1]


def estimate_dr_emee2(panel: PanelDataset, nuisance: NuisanceFits, weights: WeightSet) -> EstimateReport:
    """DR-EMEE with its influence residualized on the treatment score basis."""
    phi = dr_terms(panel, nuisance, weights)
    tau_dr = phi.mean()
    basis = score_basis(panel, nuisance)
    resid, fitted, deficient = project_out(phi - tau_dr, basis)
    warns = ("score Gram matrix is singular; projected with the pseudo-inverse",) if deficient else ()
    tau = tau_dr - fitted.mean()
    return _report("DR-EMEE2", panel, resid + tau, tau, weights, _echo("DR-EMEE2", nuisance, weights), warns)


def estimate(method: str, panel: PanelDataset, nuisance: NuisanceFits, weights: WeightSet) -> EstimateReport:
    method = canonical_method(method)
    if method == "IPW":
        return estimate_ipw(panel, nuisance, weights)
    if method == "EMEE":
        return estimate_emee(panel, nuisance)
    if method == "DR-EMEE":
        return estimate_dr_emee(panel, nuisance, weights)
    return estimate_dr_emee2(panel, nuisance, weights)

"""Working models for the treatment, numerator and outcome nuisances.

Logistic regression is fitted by Newton-Raphson (IRLS) with step-halving and a
ridge penalty on all coefficients, intercept included. Predictions are clipped
to ``[EPS_CLIP, 1 - EPS_CLIP]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .data import PanelDataset, design_matrix
from .errors import ConfigurationError, DataError, DegenerateArmError, DegenerateFoldError, NumericalError

EPS_CLIP = 1e-6
DEFAULT_RIDGE = 1e-6
MAX_RIDGE = 1e-2
SEPARATION_COEF = 30.0
SCORE_TOL = 1e-8
MAX_ITER = 100


@dataclass(frozen=True)
class ColumnSpec:
    columns: tuple = ()
    intercept: bool = True

    @property
    def width(self):
        return len(self.columns) + int(self.intercept)


@dataclass(frozen=True)
class LogisticModel:
    coefficients: np.ndarray
    column_spec: ColumnSpec
    ridge_lambda: float
    converged: bool
    iterations: int
    loglik: float = float("nan")
    trace: tuple = ()


def expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def clip_prob(p):
    return np.clip(p, EPS_CLIP, 1.0 - EPS_CLIP)


def _newton(X, y, w, lam, beta0, max_iter, tol):
    beta = beta0.copy()
    ll, score, info = kernels.logistic_terms(X, y, w, beta, lam)
    trace = [ll]
    it = 0
    converged = bool(np.max(np.abs(score), initial=0.0) < tol)
    while not converged and it < max_iter:
        it += 1
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            cand = beta + t * step
            ll_c, score_c, info_c = kernels.logistic_terms(X, y, w, cand, lam)
            if np.isfinite(ll_c) and ll_c >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            break  # no ascent direction left; keep best iterate
        beta, ll, score, info = cand, ll_c, score_c, info_c
        trace.append(ll)
        converged = bool(np.max(np.abs(score)) < tol)
    return beta, ll, converged, it, tuple(trace)


def fit_logistic(X, y, weights=None, ridge_lambda: float = DEFAULT_RIDGE, column_spec: ColumnSpec | None = None,
                 escalate: bool = True, max_iter: int = MAX_ITER, tol: float = SCORE_TOL) -> LogisticModel:
    """Maximize the (weighted) ridge-penalized Bernoulli log-likelihood.

    ``converged`` is true iff the largest absolute score component falls below
    ``tol`` within ``max_iter`` Newton iterations. When ``escalate`` is set and
    any coefficient exceeds 30 in magnitude (separation), the penalty is
    multiplied by 10 and the fit repeated, up to ``MAX_RIDGE``.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if X.ndim != 2:
        raise ConfigurationError("X must be a 2-d matrix")
    if X.shape[0] != y.shape[0]:
        raise ConfigurationError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    if np.any((y != 0) & (y != 1)):
        raise ConfigurationError("y must be binary (0/1)")
    if ridge_lambda < 0:
        raise ConfigurationError("ridge_lambda must be nonnegative")
    w = np.ones(X.shape[0]) if weights is None else np.ascontiguousarray(weights, dtype=float)
    if w.shape != y.shape or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigurationError("weights must be a finite nonnegative vector aligned with y")
    if column_spec is None:
        column_spec = ColumnSpec(tuple(f"x{j}" for j in range(X.shape[1])), intercept=False)
    if column_spec.width != X.shape[1]:
        raise ConfigurationError(f"column spec describes {column_spec.width} columns, X has {X.shape[1]}")
    d = X.shape[1]
    if ridge_lambda == 0 and np.linalg.matrix_rank(X[w > 0]) < d:
        raise NumericalError("design matrix is rank deficient; refit with ridge_lambda > 0")

    lam = float(ridge_lambda)
    beta0 = np.zeros(d)
    while True:
        beta, ll, conv, it, trace = _newton(X, y, w, lam, beta0, max_iter, tol)
        separated = np.any(np.abs(beta) > SEPARATION_COEF)
        if not (escalate and separated and lam < MAX_RIDGE):
            break
        lam = min(MAX_RIDGE, max(lam * 10.0, 1e-8))
    if not np.all(np.isfinite(beta)):
        raise NumericalError("logistic fit produced non-finite coefficients")
    beta.setflags(write=False)
    return LogisticModel(beta, column_spec, lam, conv, it, ll, trace)


def predict_prob(model: LogisticModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.coefficients):
        raise ConfigurationError(
            f"design has {X.shape[-1] if X.ndim else 0} columns; model expects {len(model.coefficients)}")
    return clip_prob(expit(X @ model.coefficients))


# ---------------------------------------------------------------------------
# nuisance fits over a panel

@dataclass(frozen=True)
class NuisanceSpec:
    """Column choices for the working models.

    ``None`` means "all covariates" for the treatment/outcome models and "the
    panel's moderators" for the numerator model. ``treatment_source='design'``
    uses the known randomization probability instead of a fitted model.
    """

    treatment_columns: Optional[tuple] = None
    moderator_columns: Optional[tuple] = None
    outcome_columns: Optional[tuple] = None
    ridge_lambda: float = DEFAULT_RIDGE
    treatment_source: str = "fit"

    def resolve(self, panel: PanelDataset) -> "NuisanceSpec":
        t = tuple(panel.covariate_names) if self.treatment_columns is None else tuple(self.treatment_columns)
        s = tuple(panel.moderator_names) if self.moderator_columns is None else tuple(self.moderator_columns)
        o = tuple(panel.covariate_names) if self.outcome_columns is None else tuple(self.outcome_columns)
        for cols in (t, s, o):
            panel.column_index(cols)
        if self.treatment_source not in ("fit", "design"):
            raise ConfigurationError("treatment_source must be 'fit' or 'design'")
        return replace(self, treatment_columns=t, moderator_columns=s, outcome_columns=o)

    def to_dict(self):
        return {"treatment_columns": None if self.treatment_columns is None else list(self.treatment_columns),
                "moderator_columns": None if self.moderator_columns is None else list(self.moderator_columns),
                "outcome_columns": None if self.outcome_columns is None else list(self.outcome_columns),
                "ridge_lambda": self.ridge_lambda, "treatment_source": self.treatment_source}


@dataclass(frozen=True)
class NuisanceFits:
    """Nuisance predictions aligned to the panel's available rows."""

    p_hat: np.ndarray
    p_tilde: np.ndarray
    m1_hat: np.ndarray
    m0_hat: np.ndarray
    fold_assignment: np.ndarray
    source: str  # 'design-known' | 'fitted' | 'cross-fitted'
    spec: NuisanceSpec
    outcome_fitted: bool = True
    models: dict = field(default_factory=dict)

    @property
    def n_rows(self):
        return len(self.p_hat)


def _available_arrays(panel):
    mask = panel.available
    return panel.A[mask].astype(float), panel.Y[mask].astype(float), panel.p_known[mask]


def _fit_arm(X, Y, A, arm, lam, spec_cols, label):
    sel = A == arm
    if not np.any(sel):
        raise DegenerateArmError(f"no available rows with A={arm}; cannot fit the {label} outcome model")
    return fit_logistic(X[sel], Y[sel], ridge_lambda=lam, column_spec=spec_cols)


def _design_p(panel, p_known):
    if np.any(np.isnan(p_known)):
        raise DataError("design-known treatment probabilities requested but p_known is missing on available rows")
    return clip_prob(p_known)


def fit_nuisance(panel: PanelDataset, spec: NuisanceSpec | None = None) -> NuisanceFits:
    """In-sample fits of all working models (source = 'fitted')."""
    spec = (spec or NuisanceSpec()).resolve(panel)
    A, Y, pk = _available_arrays(panel)
    if len(A) == 0:
        raise DataError("panel has no available rows")
    lam = spec.ridge_lambda
    cs_t = ColumnSpec(spec.treatment_columns)
    cs_s = ColumnSpec(spec.moderator_columns)
    cs_o = ColumnSpec(spec.outcome_columns)
    Xt = design_matrix(panel, spec.treatment_columns)
    Xs = design_matrix(panel, spec.moderator_columns)
    Xo = design_matrix(panel, spec.outcome_columns)
    models = {}
    if spec.treatment_source == "design":
        p_hat = _design_p(panel, pk)
    else:
        models["treatment"] = fit_logistic(Xt, A, ridge_lambda=lam, column_spec=cs_t)
        p_hat = predict_prob(models["treatment"], Xt)
    models["numerator"] = fit_logistic(Xs, A, ridge_lambda=lam, column_spec=cs_s)
    p_tilde = predict_prob(models["numerator"], Xs)
    models["outcome1"] = _fit_arm(Xo, Y, A, 1, lam, cs_o, "treated")
    models["outcome0"] = _fit_arm(Xo, Y, A, 0, lam, cs_o, "control")
    m1 = predict_prob(models["outcome1"], Xo)
    m0 = predict_prob(models["outcome0"], Xo)
    folds = np.zeros(len(A), dtype=np.int64)
    return NuisanceFits(p_hat, p_tilde, m1, m0, folds, "fitted", spec, True, models)


def subject_folds(panel: PanelDataset, K: int, seed: int) -> np.ndarray:
    """Fold index per subject (panel order) from a seeded shuffle."""
    G = panel.n_subjects
    order = np.random.default_rng(seed).permutation(G)
    folds = np.empty(G, dtype=np.int64)
    folds[order] = np.arange(G) % K
    return folds


def cross_fit(panel: PanelDataset, spec: NuisanceSpec | None = None, K: int = 2, seed: int = 0) -> NuisanceFits:
    """K-fold cross-fitting with subjects (not rows) as the sampling unit."""
    if K < 2:
        raise ConfigurationError("cross-fitting requires K >= 2")
    spec = (spec or NuisanceSpec()).resolve(panel)
    if panel.n_subjects < K:
        raise ConfigurationError(f"cannot split {panel.n_subjects} subjects into {K} folds")
    A, Y, pk = _available_arrays(panel)
    lam = spec.ridge_lambda
    starts = panel.subject_starts()
    row_fold_all = np.repeat(subject_folds(panel, K, seed), np.diff(starts))
    fold = row_fold_all[panel.available]
    Xt = design_matrix(panel, spec.treatment_columns)
    Xs = design_matrix(panel, spec.moderator_columns)
    Xo = design_matrix(panel, spec.outcome_columns)
    cs_t, cs_s, cs_o = (ColumnSpec(spec.treatment_columns), ColumnSpec(spec.moderator_columns),
                        ColumnSpec(spec.outcome_columns))
    n = len(A)
    p_hat = _design_p(panel, pk) if spec.treatment_source == "design" else np.empty(n)
    p_tilde, m1, m0 = np.empty(n), np.empty(n), np.empty(n)
    models = {}
    for k in range(K):
        test = fold == k
        train = ~test
        if not np.any(test):
            continue
        At, Yt = A[train], Y[train]
        checks = [("treatment", At)] + [(f"outcome (A={a})", Yt[At == a]) for a in (1, 0)]
        for label, target in checks:
            if target.size == 0 or target.min() == target.max():
                raise DegenerateFoldError(
                    f"fold {k}: training complement has a single class for the {label} model")
        if spec.treatment_source == "fit":
            mt = fit_logistic(Xt[train], At, ridge_lambda=lam, column_spec=cs_t)
            p_hat[test] = predict_prob(mt, Xt[test])
        ms = fit_logistic(Xs[train], At, ridge_lambda=lam, column_spec=cs_s)
        p_tilde[test] = predict_prob(ms, Xs[test])
        m1m = fit_logistic(Xo[train][At == 1], Yt[At == 1], ridge_lambda=lam, column_spec=cs_o)
        m0m = fit_logistic(Xo[train][At == 0], Yt[At == 0], ridge_lambda=lam, column_spec=cs_o)
        m1[test] = predict_prob(m1m, Xo[test])
        m0[test] = predict_prob(m0m, Xo[test])
        models[k] = {"numerator": ms, "outcome1": m1m, "outcome0": m0m}
    return NuisanceFits(p_hat, p_tilde, m1, m0, fold, "cross-fitted", spec, True, models)


def from_design(panel: PanelDataset, spec: NuisanceSpec | None = None) -> NuisanceFits:
    """Known randomization probabilities; the outcome model is a pooled-mean placeholder."""
    spec = replace(spec or NuisanceSpec(), treatment_source="design").resolve(panel)
    A, Y, pk = _available_arrays(panel)
    p_hat = _design_p(panel, pk)
    models = {}
    if spec.moderator_columns:
        Xs = design_matrix(panel, spec.moderator_columns)
        models["numerator"] = fit_logistic(Xs, A, ridge_lambda=spec.ridge_lambda,
                                           column_spec=ColumnSpec(spec.moderator_columns))
        p_tilde = predict_prob(models["numerator"], Xs)
    else:
        p_tilde = clip_prob(np.full(len(A), p_hat.mean()))
    pooled = np.full(len(A), Y.mean() if len(Y) else 0.5)
    return NuisanceFits(p_hat, p_tilde, pooled.copy(), pooled.copy(), np.zeros(len(A), dtype=np.int64),
                        "design-known", spec, False, models)


def build_nuisance(panel: PanelDataset, mode: str = "fit", spec: NuisanceSpec | None = None,
                   seed: int = 0) -> NuisanceFits:
    """Dispatch on a CLI-style mode string: 'design', 'fit' or 'crossfit:K'."""
    mode = str(mode)
    if mode == "design":
        return from_design(panel, spec)
    if mode == "fit":
        return fit_nuisance(panel, spec)
    if mode.startswith("crossfit"):
        _, _, k = mode.partition(":")
        try:
            K = int(k) if k else 2
        except ValueError:
            raise ConfigurationError(f"bad cross-fit mode {mode!r}; expected crossfit:K") from None
        return cross_fit(panel, spec, K, seed)
    raise ConfigurationError(f"unknown nuisance mode {mode!r}; expected design, fit or crossfit:K")


def outcome_delta_terms(panel: PanelDataset, nuisance: NuisanceFits) -> np.ndarray:
    """Per-row first-order contribution of the fitted outcome coefficients to the
    regression estimator mean(m1 - m0), via the delta method on the arm-wise
    logistic score equations. Zero vector when the outcome model is a placeholder.
    """
    A, Y, _ = _available_arrays(panel)
    n = len(A)
    if not nuisance.outcome_fitted:
        return np.zeros(n)
    Xo = design_matrix(panel, nuisance.spec.outcome_columns)
    lam = nuisance.spec.ridge_lambda
    out = np.zeros(n)
    for arm, m, sign in ((1, nuisance.m1_hat, 1.0), (0, nuisance.m0_hat, -1.0)):
        sel = (A == arm).astype(float)
        v = m * (1.0 - m)
        J = (Xo * (sel * v)[:, None]).T @ Xo / n + (lam / n) * np.eye(Xo.shape[1])
        D = (Xo * v[:, None]).mean(axis=0)
        try:
            c = np.linalg.solve(J, D)
        except np.linalg.LinAlgError:
            c = np.linalg.lstsq(J, D, rcond=None)[0]
        out += sign * sel * (Xo @ c) * (Y - m)
    return out

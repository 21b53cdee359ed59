"""Synthetic micro-randomized trials and Monte Carlo scenario execution.

Data-generating model per subject i and decision time t::

    H_t   ~ N(0, I_3)
    p_t   = design rule (constant, or logistic in H_1 with optional floor)
    A_t   ~ Bernoulli(expit(logit(p_t) + delta))      # analyst sees p_t
    Y_t   ~ Bernoulli(expit(f(H_t) + b_i + (beta + u_i) A_t))

with ``f(H) = gamma'H`` (linear-logit) or ``gamma'H + 0.5 H_1^2 - 0.4 H_1 H_2``
(nonlinear), and optional subject random intercepts ``b_i`` / random effects
``u_i``. All random streams are drawn in a fixed order so that scenarios that
differ only in ``delta`` or analysis settings share their random numbers.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .analysis import AnalysisConfig, analyze
from .data import PanelDataset
from .errors import ConfigurationError, DegenerateArmError, DegenerateFoldError, ScenarioFailure
from .estimators import canonical_method
from .nuisance import NuisanceSpec
from .variance import cluster_factor, critical_value
from .weights import parse_bounds

COVARIATES = ("H1", "H2", "H3")
DEFAULT_GAMMA = (0.3, -0.2, 0.1)
OUTCOME_FORMS = ("linear-logit", "nonlinear")
REGIMES = ("both-correct", "outcome-wrong", "treatment-wrong", "both-wrong")
ORACLE_DRAWS = 1_000_000
ORACLE_SEED = 20240917
MAX_EXCLUDED = 0.05
FAST_REPS = 200

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def child_seed(seed: int, rep_index: int) -> int:
    """64-bit seed for replication ``rep_index`` of a scenario seeded with ``seed``."""
    return _splitmix64(_splitmix64(int(seed) & _MASK64) ^ (int(rep_index) & _MASK64))


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logit(p):
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class TreatmentRule:
    """Design probability ``clip(expit(logit(base) + slope * H_1), floor, 1 - floor)``.

    ``slope = 0`` and ``floor = 0`` give the constant design ``base``.
    """

    base: float = 0.5
    slope: float = 0.0
    floor: float = 0.0

    def __post_init__(self):
        if not 0 < self.base < 1:
            raise ConfigurationError(f"design probability must lie in (0, 1), got {self.base}")
        if not 0 <= self.floor < 0.5:
            raise ConfigurationError("probability floor must lie in [0, 0.5)")

    @property
    def constant(self) -> bool:
        return self.slope == 0

    def __call__(self, H: np.ndarray) -> np.ndarray:
        if self.constant:
            p = np.full(H.shape[0], self.base)
        else:
            p = _expit(_logit(self.base) + self.slope * H[:, 0])
        if self.floor > 0:
            p = np.clip(p, self.floor, 1.0 - self.floor)
        return p

    def label(self) -> str:
        return f"{self.base:g}" if self.constant and self.floor == 0 else \
            f"expit(logit({self.base:g})+{self.slope:g}*H1)|{self.floor:g}"


def _as_rule(spec) -> TreatmentRule:
    if isinstance(spec, TreatmentRule):
        return spec
    if isinstance(spec, dict):
        return TreatmentRule(**spec)
    return TreatmentRule(float(spec))


@dataclass(frozen=True)
class Scenario:
    """One cell of a simulation design; see the module docstring for the model.

    Analysis settings: ``treatment_source`` ('design' uses the known design
    probability, 'fit' fits a logistic treatment model on H); ``nuisance_regime``
    replaces the treatment and/or outcome working model by an intercept-only
    fit ('-wrong' regimes); ``trunc_spec`` and ``scheme`` configure the weights.
    """

    n: int = 100
    T: int = 30
    p_t_spec: object = 0.5
    beta_true: float = 0.2
    gamma: tuple = DEFAULT_GAMMA
    outcome_form: str = "linear-logit"
    delta: float = 0.0
    nuisance_regime: str = "both-correct"
    trunc_spec: object = "q:0.01,0.99"
    reps: int = 1000
    seed: int = 2024
    subject_sd: float = 0.0
    effect_sd: float = 0.0
    treatment_source: str = "design"
    scheme: str = "per-decision"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "p_t_spec", _as_rule(self.p_t_spec))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if self.n < 2 or self.T < 1 or self.reps < 1:
            raise ConfigurationError("scenario needs n >= 2, T >= 1 and reps >= 1")
        if len(self.gamma) != len(COVARIATES):
            raise ConfigurationError(f"gamma must have {len(COVARIATES)} entries")
        if self.outcome_form not in OUTCOME_FORMS:
            raise ConfigurationError(f"outcome_form must be one of {OUTCOME_FORMS}")
        if self.nuisance_regime not in REGIMES:
            raise ConfigurationError(f"nuisance_regime must be one of {REGIMES}")
        if self.treatment_source not in ("design", "fit"):
            raise ConfigurationError("treatment_source must be 'design' or 'fit'")
        if self.subject_sd < 0 or self.effect_sd < 0:
            raise ConfigurationError("random-effect standard deviations must be nonnegative")
        parse_bounds(self.trunc_spec)

    @property
    def key(self) -> tuple:
        return (self.n, self.p_t_spec.label(), parse_bounds(self.trunc_spec).label(), self.nuisance_regime,
                self.delta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["p_t_spec"] = asdict(self.p_t_spec)
        d["gamma"] = list(self.gamma)
        d["trunc_spec"] = parse_bounds(self.trunc_spec).label()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown scenario key(s) {unknown}")
        return cls(**d)

    def analysis_config(self, methods: Sequence[str]) -> AnalysisConfig:
        outcome = () if self.nuisance_regime in ("outcome-wrong", "both-wrong") else None
        if self.nuisance_regime in ("treatment-wrong", "both-wrong"):
            spec = NuisanceSpec(treatment_columns=(), outcome_columns=outcome, treatment_source="fit")
        else:
            spec = NuisanceSpec(outcome_columns=outcome, treatment_source=self.treatment_source)
        return AnalysisConfig(methods=tuple(methods), nuisance_mode="fit", nuisance_spec=spec,
                              scheme=self.scheme, trunc=self.trunc_spec, se_kind="naive")


def _linear_predictor(H, gamma, form):
    eta = H @ np.asarray(gamma)
    if form == "nonlinear":
        eta = eta + 0.5 * H[:, 0] ** 2 - 0.4 * H[:, 0] * H[:, 1]
    return eta


@lru_cache(maxsize=64)
def _oracle(gamma: tuple, beta: float, form: str, subject_sd: float, effect_sd: float, draws: int,
            seed: int) -> float:
    rng = np.random.default_rng(seed)
    total, done, chunk = 0.0, 0, 250_000
    while done < draws:
        m = min(chunk, draws - done)
        H = rng.standard_normal((m, len(gamma)))
        b = rng.standard_normal(m) * subject_sd
        u = rng.standard_normal(m) * effect_sd
        eta = _linear_predictor(H, gamma, form) + b
        total += float(np.sum(_expit(eta + beta + u) - _expit(eta)))
        done += m
    return total / draws


def tau_reference(scn: Scenario, draws: int = ORACLE_DRAWS, seed: int = ORACLE_SEED) -> float:
    """Marginal risk difference E[expit(f(H)+b+beta+u) - expit(f(H)+b)] by Monte Carlo.

    Treatment assignment does not enter: H is exogenous, so the estimand is
    the same for every design rule and every delta.
    """
    return _oracle(scn.gamma, float(scn.beta_true), scn.outcome_form, float(scn.subject_sd),
                   float(scn.effect_sd), int(draws), int(seed))


def generate_panel(scn: Scenario, rep_index: int) -> PanelDataset:
    """Draw replication ``rep_index`` of ``scn``.

    ``meta`` holds the scenario reference truth ``tau_ref``, the in-sample
    potential-outcome effect ``tau_sample``, the generating probabilities and
    the child seed.
    """
    n, T = scn.n, scn.T
    N = n * T
    seed = child_seed(scn.seed, rep_index)
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((N, len(COVARIATES)))
    b = np.repeat(rng.standard_normal(n) * scn.subject_sd, T)
    u = np.repeat(rng.standard_normal(n) * scn.effect_sd, T)
    U_A = rng.random(N)
    U_Y = rng.random(N)

    p_design = scn.p_t_spec(H)
    p_gen = p_design if scn.delta == 0 else _expit(_logit(p_design) + scn.delta)
    A = (U_A < p_gen).astype(np.int64)
    eta0 = _linear_predictor(H, scn.gamma, scn.outcome_form) + b
    eff = scn.beta_true + u
    Y = (U_Y < _expit(eta0 + eff * A)).astype(np.int64)

    subject = np.repeat(np.arange(n), T).astype(object)
    t = np.tile(np.arange(1, T + 1), n)
    meta = {"tau_ref": tau_reference(scn), "tau_sample": float(np.mean(_expit(eta0 + eff) - _expit(eta0))),
            "p_gen": p_gen, "rep_index": int(rep_index), "child_seed": int(seed)}
    return PanelDataset(subject, t, A, Y, np.ones(N, dtype=np.int64), H, p_design, COVARIATES, (), meta)


# ---------------------------------------------------------------------------
# replication and aggregation

_REP_FIELDS = ("tau", "se_naive", "se_corrected", "se_cluster", "se_hc3")


def _replicate(args):
    """Run all methods on one replication; returns (rep_index, per-method rows, weight diag) or an exclusion."""
    scn, rep_index, methods = args
    panel = generate_panel(scn, rep_index)
    config = scn.analysis_config(methods)
    try:
        res = analyze(panel, config, validate=False)
    except (DegenerateArmError, DegenerateFoldError) as exc:
        return rep_index, None, f"{type(exc).__name__}: {exc}"
    G = panel.n_subjects
    rows = {}
    for r in res.results:
        inf = r.inference
        se_hc3 = inf.se_cluster * math.sqrt(cluster_factor(G, r.report.n_rows, "HC3-like")
                                            / cluster_factor(G, r.report.n_rows, "none"))
        rows[r.report.method] = (r.report.tau_hat, inf.se_naive, inf.se_corrected, inf.se_cluster, se_hc3)
    return rep_index, rows, res.weights.diagnostics.to_dict()


@dataclass(frozen=True)
class MethodSummary:
    bias: float
    sd: float
    mean_se: float
    mse: float
    rmse: float
    mc_se: float
    coverage: float
    re: float
    q2_5: float
    median: float
    q97_5: float
    coverage_corrected: float
    coverage_cluster: float
    coverage_hc3_t: float
    mean_se_corrected: float
    mean_se_cluster: float
    n_reps: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["q2.5"] = d.pop("q2_5")
        d["q97.5"] = d.pop("q97_5")
        return d


@dataclass(frozen=True)
class ScenarioResult:
    scenario: Scenario
    tau_ref: float
    methods: dict
    weight_diag: dict
    runtime_sec: float
    n_excluded: int = 0
    exclusions: tuple = ()
    estimates: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def key(self) -> tuple:
        return self.scenario.key

    def records(self) -> list:
        """One flat record per method (report schema)."""
        out = []
        for method, s in self.methods.items():
            rec = {"scenario": self.scenario.name or None, "key": list(self.key), "method": method,
                   "tau_ref": self.tau_ref}
            rec.update(s.to_dict())
            rec.update(self.weight_diag)
            rec.update(n_excluded=self.n_excluded, runtime_sec=self.runtime_sec)
            out.append(rec)
        return out


def summarize(estimates: np.ndarray, ses: dict, tau_ref: float, mse_ref: float, G: int) -> MethodSummary:
    """Aggregate one method's replications; ``ses`` maps SE kind to a vector."""
    est = np.asarray(estimates, dtype=float)
    R = est.size
    bias = float(est.mean() - tau_ref)
    sd = float(est.std(ddof=1)) if R > 1 else 0.0
    mse = bias ** 2 + sd ** 2 * (R - 1) / R
    z = critical_value(0.95, "normal")
    tq = critical_value(0.95, "t", G - 1) if G >= 2 else math.nan

    def cover(se, q):
        return float(np.mean(np.abs(est - tau_ref) <= q * np.asarray(se)))

    if mse == 0:
        re = 1.0 if mse_ref == 0 else math.inf
    else:
        re = mse_ref / mse
    q = np.quantile(est, [0.025, 0.5, 0.975])
    return MethodSummary(bias, sd, float(np.mean(ses["naive"])), mse, math.sqrt(mse), sd / math.sqrt(R),
                         cover(ses["naive"], z), float(re), float(q[0]), float(q[1]), float(q[2]),
                         cover(ses["corrected"], z), cover(ses["cluster"], z), cover(ses["hc3"], tq),
                         float(np.mean(ses["corrected"])), float(np.mean(ses["cluster"])), R)


def _aggregate_diag(diags: list) -> dict:
    if not diags:
        return {}
    keys = diags[0].keys()
    out = {k: float(np.mean([d[k] for d in diags])) for k in keys}
    out["max_w"] = float(max(d["max_w"] for d in diags))
    return out


def run_scenario(scn: Scenario, methods: Sequence[str] = ("IPW", "EMEE", "DR-EMEE"), workers: int = 1,
                 chunksize: Optional[int] = None) -> ScenarioResult:
    """Execute ``scn.reps`` replications and aggregate per method.

    IPW is always run as the relative-efficiency reference. Results are
    reduced in replication order, so the output does not depend on
    ``workers``.
    """
    methods = tuple(dict.fromkeys(canonical_method(m) for m in methods))
    if not methods:
        raise ConfigurationError("methods must be nonempty")
    run_methods = methods if "IPW" in methods else ("IPW",) + methods
    start = time.perf_counter()
    tau_ref = tau_reference(scn)
    tasks = [(scn, r, run_methods) for r in range(scn.reps)]
    if workers and workers > 1:
        cs = chunksize or max(1, scn.reps // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_replicate, tasks, chunksize=cs))
    else:
        outputs = [_replicate(t) for t in tasks]
    outputs.sort(key=lambda o: o[0])

    kept = [o for o in outputs if o[1] is not None]
    excluded = tuple(f"rep {o[0]}: {o[2]}" for o in outputs if o[1] is None)
    if len(excluded) > MAX_EXCLUDED * scn.reps:
        raise ScenarioFailure(f"scenario {scn.key}: {len(excluded)} of {scn.reps} replications excluded "
                              f"(limit {MAX_EXCLUDED:.0%}); first: {excluded[0]}")
    if not kept:
        raise ScenarioFailure(f"scenario {scn.key}: every replication was excluded")

    table = {m: np.array([o[1][m] for o in kept]) for m in run_methods}
    ipw = table["IPW"][:, 0]
    R = ipw.size
    sd_ipw = ipw.std(ddof=1) if R > 1 else 0.0
    mse_ipw = (ipw.mean() - tau_ref) ** 2 + sd_ipw ** 2 * (R - 1) / R
    summaries = {}
    for m in methods:
        cols = table[m]
        ses = {"naive": cols[:, 1], "corrected": cols[:, 2], "cluster": cols[:, 3], "hc3": cols[:, 4]}
        summaries[m] = summarize(cols[:, 0], ses, tau_ref, mse_ipw, scn.n)
    diag = _aggregate_diag([o[2] for o in kept])
    return ScenarioResult(scn, tau_ref, summaries, diag, time.perf_counter() - start, len(excluded), excluded,
                          {m: table[m][:, 0] for m in run_methods})


def run_grid(scenarios: Sequence[Scenario], methods: Sequence[str] = ("IPW", "EMEE", "DR-EMEE"),
             workers: int = 1) -> list:
    """Run scenarios independently, in order; keys must be distinct."""
    keys = [s.key for s in scenarios]
    if len(set(keys)) != len(keys):
        raise ConfigurationError("scenario grid contains duplicate keys (n, p, trunc, regime, delta)")
    return [run_scenario(s, methods, workers) for s in scenarios]


# ---------------------------------------------------------------------------
# named scenario families

def _named(name, **kw):
    return Scenario(name=name, **kw)


def preset(name: str, reps: Optional[int] = None, seed: Optional[int] = None) -> list:
    """Scenario list for a named study; ``reps``/``seed`` override the defaults."""
    def fix(s: Scenario) -> Scenario:
        kw = {}
        if reps is not None:
            kw["reps"] = int(reps)
        if seed is not None:
            kw["seed"] = int(seed)
        return replace(s, **kw) if kw else s

    if name == "baseline":
        out = [_named("baseline", n=100, T=30, p_t_spec=0.5, reps=1000)]
    elif name == "grid-s4":
        out = [_named(f"grid-n{n}-p{p:g}", n=n, p_t_spec=p, reps=300)
               for n in (30, 100, 300) for p in (0.1, 0.5, 0.9)]
    elif name == "double-robust":
        rule = TreatmentRule(0.5, 0.8)
        out = [_named("dr-outcome-wrong", n=300, p_t_spec=rule, nuisance_regime="outcome-wrong", reps=500),
               _named("dr-treatment-wrong", n=300, p_t_spec=rule, nuisance_regime="treatment-wrong", reps=500)]
    elif name == "truncation-s2":
        rule = TreatmentRule(0.1, -2.5, 0.025)
        out = [_named(f"trunc-{L:g}-{U:g}", n=100, p_t_spec=rule, outcome_form="nonlinear",
                      trunc_spec=(L, U), reps=200) for L, U in ((0.01, 10.0), (0.05, 20.0), (0.1, 5.0))]
    elif name == "delta":
        out = [_named(f"delta{d:+g}", n=100, p_t_spec=0.5, delta=d, reps=300) for d in (-0.2, 0.0, 0.2, 0.5)]
    elif name == "few-cluster":
        out = [_named("few-cluster", n=10, T=30, p_t_spec=0.5, subject_sd=1.0, effect_sd=1.0, reps=1000)]
    elif name == "small-n":
        out = [_named("small-n", n=30, T=30, p_t_spec=0.5, subject_sd=0.5, effect_sd=0.5, reps=300)]
    else:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return [fix(s) for s in out]


PRESETS = ("baseline", "grid-s4", "double-robust", "truncation-s2", "delta", "few-cluster", "small-n")

"""One-call pipeline: nuisance fits -> weights -> estimates -> inference."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .data import PanelDataset, require_valid
from .errors import ConfigurationError
from .estimators import EstimateReport, canonical_method, estimate
from .nuisance import NuisanceFits, NuisanceSpec, build_nuisance
from .variance import InferenceResult, canonical_adjustment, infer
from .weights import DEFAULT_BOUNDS, SCHEMES, WeightSet, build_weights, parse_bounds

DEFAULT_METHODS = ("IPW", "EMEE", "DR-EMEE")


@dataclass(frozen=True)
class AnalysisConfig:
    methods: tuple = DEFAULT_METHODS
    nuisance_mode: str = "fit"
    nuisance_spec: NuisanceSpec = field(default_factory=NuisanceSpec)
    scheme: str = "per-decision"
    trunc: object = DEFAULT_BOUNDS
    level: float = 0.95
    critical: str = "normal"
    adjustment: str = "none"
    p_dim: int = 1
    se_kind: str = "cluster"
    seed: int = 0

    def checked(self) -> "AnalysisConfig":
        """Canonicalize names and fail early on invalid options."""
        methods = tuple(dict.fromkeys(canonical_method(m) for m in self.methods))
        if not methods:
            raise ConfigurationError("at least one method is required")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown weight scheme {self.scheme!r}; expected one of {SCHEMES}")
        parse_bounds(self.trunc)
        return replace(self, methods=methods, adjustment=canonical_adjustment(self.adjustment))

    def to_dict(self) -> dict:
        return {"methods": list(self.methods), "nuisance": self.nuisance_mode,
                "nuisance_spec": self.nuisance_spec.to_dict(), "scheme": self.scheme,
                "trunc": parse_bounds(self.trunc).label(), "level": self.level, "critical": self.critical,
                "adjustment": self.adjustment, "p_dim": self.p_dim, "se_kind": self.se_kind, "seed": self.seed}


@dataclass(frozen=True)
class MethodResult:
    report: EstimateReport
    inference: InferenceResult

    def to_dict(self, include_influence=False) -> dict:
        out = self.report.to_dict(include_influence)
        out.update(self.inference.to_dict())
        return out


@dataclass(frozen=True)
class AnalysisResult:
    results: tuple
    nuisance: NuisanceFits
    weights: WeightSet

    def by_method(self) -> dict:
        return {r.report.method: r for r in self.results}


def analyze(panel: PanelDataset, config: AnalysisConfig | None = None, validate: bool = True) -> AnalysisResult:
    config = (config or AnalysisConfig()).checked()
    if validate:
        require_valid(panel)
    nuis = build_nuisance(panel, config.nuisance_mode, config.nuisance_spec, config.seed)
    weights = build_weights(nuis, panel, config.scheme, config.trunc)
    out = []
    for method in config.methods:
        rep = estimate(method, panel, nuis, weights)
        inf = infer(rep, config.level, config.critical, config.adjustment, config.p_dim, config.se_kind)
        out.append(MethodResult(rep, inf))
    return AnalysisResult(tuple(out), nuis, weights)

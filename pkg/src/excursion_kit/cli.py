"""Command-line entry point: ``excursion-kit {simulate,estimate,diagnose-weights,derive,fixture}``.

Every command writes line-delimited JSON: a ``manifest`` record first, then
``result`` / ``diagnostics`` / ``error`` records. A readable table goes to
stderr. Exit status is 0 iff no error record was emitted, 2 for invalid
configuration or usage.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import DEFAULT_METHODS, AnalysisConfig, analyze
from .data import PanelDataset, require_valid
from .errors import ConfigurationError, ExcursionError
from .estimators import METHODS, canonical_method
from .ingestion import (DATASETS, SCENARIO_IDS, DerivationRecipe, LongTableSpec, derive_panel, load_long_table,
                        load_panel, save_panel, scenario_slices, write_mhealth_fixture, write_pamap2_fixture)
from .nuisance import NuisanceSpec, build_nuisance
from .simulation import PRESETS, Scenario, preset, run_scenario
from .weights import TABLE_PRESETS, build_weights, parse_bounds

SEED_ENV = "EXCURSION_KIT_SEED"
DEFAULT_SEED = 2024
EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


# ---------------------------------------------------------------------------
# config handling

def load_config(path) -> dict:
    """Read a JSON or YAML mapping; errors name the file."""
    if path is None:
        return {}
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config: {exc}") from None
    try:
        if p.suffix.lower() == ".json":
            doc = json.loads(text)
        else:
            import yaml
            doc = yaml.safe_load(text)
    except Exception as exc:  # parser-specific exception types
        raise ConfigurationError(f"{path}: cannot parse config: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return doc


def _check_keys(doc: dict, allowed, where: str):
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigurationError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")


def parse_methods(value) -> tuple:
    if value is None:
        return DEFAULT_METHODS
    items = value.split(",") if isinstance(value, str) else list(value)
    items = [str(i).strip() for i in items if str(i).strip()]
    if any(i.lower() == "all" for i in items):
        return DEFAULT_METHODS
    if not items:
        raise ConfigurationError(f"no methods given; valid methods: {', '.join(METHODS)} or 'all'")
    return tuple(dict.fromkeys(canonical_method(i) for i in items))


def resolve_seed(cli_seed, config_seed) -> int:
    if cli_seed is not None:
        return int(cli_seed)
    if config_seed is not None:
        return int(config_seed)
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV}={env!r} is not an integer") from None
    return DEFAULT_SEED


def _digest(path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


class Emitter:
    """Collects records and writes them as JSONL, manifest first."""

    def __init__(self, command: str, argv):
        self.manifest = {"record": "manifest", "command": command, "argv": list(argv),
                         "artifact_version": __version__, "started": _now(), "resolved_config": {},
                         "seed": None, "input_digests": {}}
        self.records = []
        self.errors = 0

    def add(self, record: dict):
        self.records.append(_clean(record))

    def error(self, message: str, **context):
        self.errors += 1
        self.records.append(_clean({"record": "error", "message": message, **context}))
        print(f"error: {message}", file=sys.stderr)

    def write(self, output):
        self.manifest["finished"] = _now()
        lines = [json.dumps(_clean(self.manifest), sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.records]
        text = "\n".join(lines) + "\n"
        if output in (None, "-"):
            sys.stdout.write(text)
        else:
            Path(output).write_text(text, encoding="utf-8")


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def print_table(rows: list, columns: list, stream=None):
    stream = stream or sys.stderr
    if not rows:
        return
    cells = [[_fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[j]) for row in cells)) for j, c in enumerate(columns)]
    print("  ".join(c.rjust(w) for c, w in zip(columns, widths)), file=stream)
    for row in cells:
        print("  ".join(v.rjust(w) for v, w in zip(row, widths)), file=stream)


# ---------------------------------------------------------------------------
# simulate

SIM_KEYS = {"preset", "scenarios", "methods", "workers", "reps", "seed", "trunc", "scheme", "nuisance",
            "fast"}


def _apply_nuisance_flag(scn: Scenario, mode: str) -> Scenario:
    if mode == "design":
        return replace(scn, treatment_source="design")
    if mode == "fit":
        return replace(scn, treatment_source="fit")
    raise ConfigurationError(f"simulate supports --nuisance design or fit, got {mode!r}")


def resolve_simulation(args, cfg: dict) -> tuple:
    _check_keys(cfg, SIM_KEYS, args.config or "config")
    seed = resolve_seed(args.seed, cfg.get("seed"))
    reps = args.reps if args.reps is not None else cfg.get("reps")
    if args.fast or cfg.get("fast"):
        reps = reps or 200
    scenarios = []
    name = args.preset or cfg.get("preset")
    if name:
        scenarios.extend(preset(name))
    for j, d in enumerate(cfg.get("scenarios") or []):
        if not isinstance(d, dict):
            raise ConfigurationError(f"{args.config}: scenarios[{j}]: expected a mapping")
        try:
            scenarios.append(Scenario.from_dict(d))
        except (ConfigurationError, TypeError) as exc:
            raise ConfigurationError(f"{args.config}: scenarios[{j}]: {exc}") from None
    if not scenarios:
        scenarios = preset("baseline")
    trunc = args.trunc[-1] if args.trunc else cfg.get("trunc")
    scheme = args.scheme or cfg.get("scheme")
    nuis = args.nuisance or cfg.get("nuisance")
    out = []
    for s in scenarios:
        kw = {"seed": seed}
        if reps is not None:
            kw["reps"] = int(reps)
        if trunc is not None:
            kw["trunc_spec"] = str(trunc)
        if scheme is not None:
            kw["scheme"] = scheme
        s = replace(s, **kw)
        if nuis is not None:
            s = _apply_nuisance_flag(s, nuis)
        out.append(s)
    methods = parse_methods(args.methods if args.methods is not None else cfg.get("methods"))
    workers = args.workers if args.workers is not None else cfg.get("workers", os.cpu_count() or 1)
    return out, methods, int(workers), seed


def cmd_simulate(args, em: Emitter) -> None:
    cfg = load_config(args.config)
    if args.config:
        em.manifest["input_digests"][str(args.config)] = _digest(args.config)
    scenarios, methods, workers, seed = resolve_simulation(args, cfg)
    em.manifest["seed"] = seed
    em.manifest["resolved_config"] = {"methods": list(methods), "workers": workers,
                                      "scenarios": [s.to_dict() for s in scenarios]}
    timings = []
    table = []
    for s in scenarios:
        try:
            res = run_scenario(s, methods, workers)
        except ExcursionError as exc:
            em.error(f"{type(exc).__name__}: {exc}", scenario=s.name or None, key=list(s.key))
            continue
        timings.append({"scenario": s.name or None, "runtime_sec": res.runtime_sec})
        for rec in res.records():
            rec.pop("runtime_sec", None)
            em.add({"record": "result", **rec})
            table.append(rec)
    em.manifest["timings"] = timings
    print_table(table, ["scenario", "method", "bias", "sd", "mean_se", "rmse", "mc_se", "coverage", "re"])


# ---------------------------------------------------------------------------
# estimate / diagnose-weights / derive

DATA_KEYS = {"data", "dataset", "scenario", "delimiter", "table", "recipe", "methods", "trunc", "scheme",
             "nuisance", "critical", "adjustment", "level", "seed", "se_kind", "p_dim", "moderators"}


def load_data(args, cfg: dict, em: Emitter) -> PanelDataset:
    data = args.data or cfg.get("data")
    if not data:
        raise ConfigurationError("no input data; pass --data or set 'data' in the config")
    em.manifest["input_digests"][str(data)] = _digest(data)
    dataset = args.dataset or cfg.get("dataset")
    if str(data).endswith(".json"):
        panel = load_panel(data)
    else:
        table = cfg.get("table")
        if table:
            _check_keys(table, {"column_map", "delimiter", "na_tokens"}, "table")
            spec = LongTableSpec(str(data), table["column_map"], table.get("delimiter", ","),
                                 tuple(table.get("na_tokens", ("NaN", "NA", ""))))
            recipe = DerivationRecipe(**(cfg.get("recipe") or {}))
        elif dataset:
            if dataset not in DATASETS:
                raise ConfigurationError(f"unknown dataset {dataset!r}; expected one of {sorted(DATASETS)}")
            cmap, recipe, delim = DATASETS[dataset]
            spec = LongTableSpec(str(data), dict(cmap), args.delimiter or cfg.get("delimiter") or delim)
            if cfg.get("recipe"):
                recipe = replace(recipe, **cfg["recipe"])
        else:
            raise ConfigurationError("long tables need --dataset (pamap2|mhealth) or a 'table' config section")
        if getattr(args, "stride", None):
            recipe = replace(recipe, downsample_stride=int(args.stride))
        panel = derive_panel(load_long_table(spec), recipe, spec)
        for w in panel.meta.get("warnings", []):
            print(f"warning: {w}", file=sys.stderr)
    scenario = args.scenario or cfg.get("scenario")
    if scenario:
        panel = scenario_slices(panel, scenario)
    require_valid(panel)
    return panel


def _nuisance_spec(cfg: dict, panel: PanelDataset) -> NuisanceSpec:
    mods = cfg.get("moderators")
    return NuisanceSpec(moderator_columns=None if mods is None else tuple(mods))


def cmd_estimate(args, em: Emitter) -> None:
    cfg = load_config(args.config)
    _check_keys(cfg, DATA_KEYS, args.config or "config")
    seed = resolve_seed(args.seed, cfg.get("seed"))
    panel = load_data(args, cfg, em)
    config = AnalysisConfig(
        methods=parse_methods(args.methods if args.methods is not None else cfg.get("methods")),
        nuisance_mode=args.nuisance or cfg.get("nuisance", "fit"),
        nuisance_spec=_nuisance_spec(cfg, panel),
        scheme=args.scheme or cfg.get("scheme", "per-decision"),
        trunc=args.trunc[-1] if args.trunc else cfg.get("trunc", "q:0.01,0.99"),
        level=float(args.level if args.level is not None else cfg.get("level", 0.95)),
        critical=args.critical or cfg.get("critical", "normal"),
        adjustment=args.adjustment or cfg.get("adjustment", "none"),
        p_dim=int(cfg.get("p_dim", 1)), se_kind=cfg.get("se_kind", "cluster"), seed=seed).checked()
    em.manifest["seed"] = seed
    em.manifest["resolved_config"] = {"data": str(args.data or cfg.get("data")),
                                      "dataset": args.dataset or cfg.get("dataset"),
                                      "scenario": args.scenario or cfg.get("scenario"), **config.to_dict()}
    try:
        res = analyze(panel, config, validate=False)
    except ExcursionError as exc:
        em.error(f"{type(exc).__name__}: {exc}")
        return
    rows = []
    for r in res.results:
        rec = {"record": "result", "n_clusters": panel.n_subjects, **r.to_dict(args.include_influence)}
        rec["bounds"] = list(res.weights.bounds)
        em.add(rec)
        rows.append(rec)
    print_table(rows, ["method", "tau_hat", "se_naive", "se_corrected", "se_cluster", "ci_lo", "ci_hi",
                       "n_clusters"])


def cmd_diagnose_weights(args, em: Emitter) -> None:
    cfg = load_config(args.config)
    _check_keys(cfg, DATA_KEYS | {"sweep"}, args.config or "config")
    seed = resolve_seed(args.seed, cfg.get("seed"))
    panel = load_data(args, cfg, em)
    sweep = args.trunc or cfg.get("sweep") or [f"{L:g},{U:g}" for L, U in TABLE_PRESETS]
    specs = [parse_bounds(s) for s in sweep]
    mode = args.nuisance or cfg.get("nuisance", "fit")
    scheme = args.scheme or cfg.get("scheme", "per-decision")
    em.manifest["seed"] = seed
    em.manifest["resolved_config"] = {"data": str(args.data or cfg.get("data")), "nuisance": mode,
                                      "scheme": scheme, "sweep": [s.label() for s in specs]}
    try:
        nuis = build_nuisance(panel, mode, _nuisance_spec(cfg, panel), seed)
    except ExcursionError as exc:
        em.error(f"{type(exc).__name__}: {exc}")
        return
    rows = []
    for spec in specs:
        try:
            ws = build_weights(nuis, panel, scheme, spec)
        except ExcursionError as exc:
            em.error(f"{type(exc).__name__}: {exc}", trunc=spec.label())
            continue
        rec = {"record": "diagnostics", "trunc": spec.label(), "bounds": list(ws.bounds), "scheme": scheme,
               **ws.diagnostics.to_dict()}
        em.add(rec)
        rows.append(rec)
    print_table(rows, ["trunc", "mean_w", "sd_w", "cv_w", "max_w", "trunc_pct"])


def cmd_derive(args, em: Emitter) -> None:
    cfg = load_config(args.config)
    _check_keys(cfg, DATA_KEYS, args.config or "config")
    panel = load_data(args, cfg, em)
    if not args.archive:
        raise ConfigurationError("derive needs --archive PATH for the panel archive")
    digest = save_panel(panel, args.archive)
    em.manifest["resolved_config"] = {"data": str(args.data or cfg.get("data")),
                                      "dataset": args.dataset or cfg.get("dataset"),
                                      "scenario": args.scenario or cfg.get("scenario")}
    em.add({"record": "archive", "path": str(args.archive), "digest": digest, "n_subjects": panel.n_subjects,
            "n_rows": panel.n_rows, "covariates": list(panel.covariate_names)})


def cmd_fixture(args, em: Emitter) -> None:
    writer = {"pamap2": write_pamap2_fixture, "mhealth": write_mhealth_fixture}[args.kind]
    seed = resolve_seed(args.seed, None)
    path = writer(args.path, seed=seed)
    em.manifest["seed"] = seed
    em.manifest["resolved_config"] = {"kind": args.kind, "path": str(path)}
    em.add({"record": "fixture", "kind": args.kind, "path": str(path), "digest": _digest(path)})


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="excursion-kit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON or YAML config; flags override its keys")
        p.add_argument("--seed", type=int, help=f"random seed (fallback: ${SEED_ENV})")
        p.add_argument("--output", default="-", help="JSONL output path ('-' = stdout)")

    def weight_flags(p, many=False):
        p.add_argument("--trunc", action="append",
                       help="truncation bounds 'L,U', 'q:lo,hi' or 'none'" + (" (repeat to sweep)" if many else ""))
        p.add_argument("--scheme", choices=("per-decision", "cumulative"))
        p.add_argument("--nuisance", help="design | fit | crossfit:K")

    def data_flags(p):
        p.add_argument("--data", help="long table (.csv/.txt/.dat) or panel archive (.json)")
        p.add_argument("--dataset", choices=sorted(DATASETS), help="derivation recipe for long tables")
        p.add_argument("--scenario", choices=SCENARIO_IDS, help="covariate-set variant")
        p.add_argument("--delimiter", help="override the dataset's delimiter")
        p.add_argument("--stride", type=int, help="keep every k-th row per subject")

    p = sub.add_parser("simulate", help="run Monte Carlo scenarios")
    common(p)
    weight_flags(p)
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--reps", type=int)
    p.add_argument("--fast", action="store_true", help="200 replications unless --reps is given")
    p.add_argument("--methods", help=f"comma list of {', '.join(METHODS)} or 'all'")
    p.add_argument("--workers", type=int, help="worker processes (default: available CPUs)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate excursion effects on a dataset")
    common(p)
    data_flags(p)
    weight_flags(p)
    p.add_argument("--methods", help=f"comma list of {', '.join(METHODS)} or 'all'")
    p.add_argument("--critical", choices=("normal", "t"))
    p.add_argument("--adjustment", choices=("none", "HC2-like", "HC3-like"))
    p.add_argument("--level", type=float)
    p.add_argument("--include-influence", action="store_true")
    p.add_argument("--workers", type=int, help="accepted for interface symmetry; estimation is serial")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("diagnose-weights", help="weight diagnostics across truncation settings")
    common(p)
    data_flags(p)
    weight_flags(p, many=True)
    p.set_defaults(func=cmd_diagnose_weights)

    p = sub.add_parser("derive", help="derive a panel archive from a long table")
    common(p)
    data_flags(p)
    p.add_argument("--archive", help="panel archive output path (.json)")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("fixture", help="write a synthetic PAMAP2- or mHealth-layout table")
    p.add_argument("kind", choices=("pamap2", "mhealth"))
    p.add_argument("path")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    em = Emitter(args.command, argv)
    try:
        args.func(args, em)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExcursionError as exc:
        em.error(f"{type(exc).__name__}: {exc}")
    em.write(args.output)
    return EXIT_ERROR if em.errors else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

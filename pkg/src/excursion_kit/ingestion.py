"""Long-format table ingestion and wearable-study derivation recipes.

Input tables are delimited text with a header row, one row per (subject,
timestamp). A :class:`DerivationRecipe` turns such a table into a
:class:`~excursion_kit.data.PanelDataset`: activity labels become the binary
outcome, heart rate or locomotion labels become the treatment, interior gaps in
heart rate are linearly interpolated, and decision times are re-indexed.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import PanelDataset
from .errors import ConfigurationError, DataError, SchemaError

DEFAULT_NA = ("NaN", "NA", "")
ARCHIVE_FORMAT = "excursion-kit-panel"
ARCHIVE_VERSION = 1

PAMAP2_ACTIVITIES = {
    0: "other", 1: "lying", 2: "sitting", 3: "standing", 4: "walking", 5: "running", 6: "cycling",
    7: "nordic walking", 9: "watching tv", 10: "computer work", 11: "car driving", 12: "ascending stairs",
    13: "descending stairs", 16: "vacuum cleaning", 17: "ironing", 18: "folding laundry",
    19: "house cleaning", 20: "playing soccer", 24: "rope jumping",
}
PAMAP2_SEDENTARY = frozenset({"lying", "sitting", "standing", "watching tv", "computer work", "car driving"})

MHEALTH_ACTIVITIES = {
    0: "null", 1: "standing still", 2: "sitting and relaxing", 3: "lying down", 4: "walking",
    5: "climbing stairs", 6: "waist bends forward", 7: "frontal elevation of arms", 8: "knees bending",
    9: "cycling", 10: "jogging", 11: "running", 12: "jump front and back",
}
MHEALTH_SEDENTARY = frozenset({"standing still", "sitting and relaxing", "lying down"})
MHEALTH_LOCOMOTION = frozenset({"walking", "cycling", "jogging", "running"})

OUTCOME_RULES = ("from-column", "activity-class")
TREATMENT_RULES = ("from-column", "hr-threshold", "locomotion-set")
SCENARIO_IDS = ("S1", "S2", "S3", "S4")


@dataclass(frozen=True)
class LongTableSpec:
    """Where a long table lives and which columns play which role.

    ``column_map`` keys: ``subject``, ``time`` (required), ``outcome``,
    ``treatment``, ``activity``, ``heart_rate``, ``p_known`` (optional) and
    ``covariates`` (nonempty list). The heart-rate column, when used as a
    covariate, must also appear in ``covariates``.
    """

    path: str
    column_map: dict
    delimiter: str = ","
    na_tokens: tuple = DEFAULT_NA

    def __post_init__(self):
        cm = dict(self.column_map)
        for key in ("subject", "time"):
            if not cm.get(key):
                raise ConfigurationError(f"column_map needs a {key!r} column")
        covs = cm.get("covariates") or []
        if isinstance(covs, str) or not covs:
            raise ConfigurationError("column_map needs a nonempty 'covariates' list")
        cm["covariates"] = tuple(covs)
        object.__setattr__(self, "column_map", cm)
        object.__setattr__(self, "na_tokens", tuple(self.na_tokens))
        if self.delimiter not in (",", ";", " ", "\t"):
            raise ConfigurationError(f"unsupported delimiter {self.delimiter!r}")

    @property
    def covariates(self) -> tuple:
        return self.column_map["covariates"]

    def role(self, key):
        return self.column_map.get(key)

    def mapped_columns(self) -> list:
        cols = []
        for key in ("subject", "time", "outcome", "treatment", "activity", "heart_rate", "p_known"):
            c = self.column_map.get(key)
            if c and c not in cols:
                cols.append(c)
        for c in self.covariates:
            if c not in cols:
                cols.append(c)
        return cols


@dataclass(frozen=True)
class RawTable:
    """Parsed columns in file order; numeric columns are float with NaN for missing."""

    columns: dict
    line_numbers: np.ndarray
    digest: str

    @property
    def n_rows(self) -> int:
        return len(self.line_numbers)

    def n_missing(self) -> int:
        return int(sum(np.isnan(v).sum() for v in self.columns.values() if v.dtype.kind == "f")
                   + sum(sum(x is None for x in v) for v in self.columns.values() if v.dtype.kind == "O"))


def _file_digest(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()


def load_long_table(spec: LongTableSpec) -> RawTable:
    """Read the mapped columns of a delimited table.

    Subject ids and activity labels are kept as strings; every other mapped
    column is parsed as a float. NA tokens become missing (NaN / None).
    """
    try:
        data = Path(spec.path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {spec.path}: {exc}") from None
    text = data.decode("utf-8-sig")
    reader = csv.reader(io.StringIO(text), delimiter=spec.delimiter, skipinitialspace=spec.delimiter == " ")
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError(f"{spec.path}: empty file, expected a header row") from None
    position = {name: j for j, name in enumerate(header)}
    wanted = spec.mapped_columns()
    for col in wanted:
        if col not in position:
            raise SchemaError(f"{spec.path}: mapped column {col!r} not found in header {header}")
    label_cols = {spec.role("subject"), spec.role("activity")} - {None}
    na = set(spec.na_tokens)
    values = {c: [] for c in wanted}
    lines = []
    for lineno, row in enumerate(reader, start=2):
        if spec.delimiter == " ":
            row = [r for r in row if r != ""]
        if not row or all(not r.strip() for r in row):
            continue
        if len(row) < len(header):
            raise DataError(f"{spec.path}:{lineno}: expected {len(header)} fields, found {len(row)}")
        for c in wanted:
            tok = row[position[c]].strip()
            if c in label_cols:
                values[c].append(None if tok in na else tok)
                continue
            if tok in na:
                values[c].append(math.nan)
                continue
            try:
                values[c].append(float(tok))
            except ValueError:
                raise DataError(f"{spec.path}:{lineno}: column {c!r}: cannot parse {tok!r} as a number") from None
        lines.append(lineno)
    cols = {c: np.array(v, dtype=object if c in label_cols else float) for c, v in values.items()}
    return RawTable(cols, np.array(lines, dtype=np.int64), _file_digest(data))


@dataclass(frozen=True)
class DerivationRecipe:
    outcome_rule: str = "from-column"
    treatment_rule: str = "from-column"
    hr_interpolation: str = "linear"
    downsample_stride: int = 1
    hr_cutoff: float = 100.0
    sedentary_set: frozenset = PAMAP2_SEDENTARY
    locomotion_set: frozenset = MHEALTH_LOCOMOTION
    activity_names: dict = field(default_factory=lambda: dict(PAMAP2_ACTIVITIES))
    null_labels: frozenset = frozenset({"0"})
    moderators: tuple = ()

    def __post_init__(self):
        if self.outcome_rule not in OUTCOME_RULES:
            raise ConfigurationError(f"outcome_rule must be one of {OUTCOME_RULES}")
        if self.treatment_rule not in TREATMENT_RULES:
            raise ConfigurationError(f"treatment_rule must be one of {TREATMENT_RULES}")
        if self.hr_interpolation not in ("linear", "none"):
            raise ConfigurationError("hr_interpolation must be 'linear' or 'none'")
        if int(self.downsample_stride) < 1:
            raise ConfigurationError("downsample_stride must be >= 1")
        for name in ("sedentary_set", "locomotion_set", "null_labels"):
            object.__setattr__(self, name, frozenset(str(v).lower() for v in getattr(self, name)))
        object.__setattr__(self, "activity_names", {int(k): str(v).lower() for k, v in self.activity_names.items()})
        object.__setattr__(self, "moderators", tuple(self.moderators))

    def check(self, spec: LongTableSpec):
        needs = []
        if self.outcome_rule == "from-column":
            needs.append("outcome")
        if self.treatment_rule == "from-column":
            needs.append("treatment")
        if self.treatment_rule == "hr-threshold":
            needs.append("heart_rate")
        if "activity-class" == self.outcome_rule or self.treatment_rule == "locomotion-set":
            needs.append("activity")
        missing = [k for k in needs if not spec.role(k)]
        if missing:
            raise ConfigurationError(f"recipe ({self.outcome_rule}, {self.treatment_rule}) needs column_map "
                                     f"entries {missing}")
        unknown = [m for m in self.moderators if m not in spec.covariates]
        if unknown:
            raise ConfigurationError(f"moderators {unknown} are not covariates")

    def label_name(self, token) -> Optional[str]:
        if token is None:
            return None
        s = str(token).strip()
        try:
            code = float(s)
        except ValueError:
            return s.lower()
        if code.is_integer() and int(code) in self.activity_names:
            return self.activity_names[int(code)]
        return s.lower()

    def is_null(self, token) -> bool:
        if token is None:
            return True
        s = str(token).strip().lower()
        try:
            code = float(s)
            s = str(int(code)) if code.is_integer() else s
        except ValueError:
            pass
        return s in self.null_labels or self.label_name(token) in self.null_labels

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("sedentary_set", "locomotion_set", "null_labels"):
            d[k] = sorted(d[k])
        d["activity_names"] = {str(k): v for k, v in sorted(self.activity_names.items())}
        d["moderators"] = list(self.moderators)
        return d


PAMAP2_RECIPE = DerivationRecipe(outcome_rule="activity-class", treatment_rule="hr-threshold",
                                 sedentary_set=PAMAP2_SEDENTARY, activity_names=PAMAP2_ACTIVITIES,
                                 null_labels=frozenset({"0", "other"}))
MHEALTH_RECIPE = DerivationRecipe(outcome_rule="activity-class", treatment_rule="locomotion-set",
                                  sedentary_set=MHEALTH_SEDENTARY, locomotion_set=MHEALTH_LOCOMOTION,
                                  activity_names=MHEALTH_ACTIVITIES, null_labels=frozenset({"0", "null"}))


def interpolate_gaps(x: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Linearly fill interior NaN runs of ``values`` along ``x``; edges stay NaN."""
    v = np.array(values, dtype=float)
    ok = ~np.isnan(v)
    if ok.sum() < 2 or ok.all():
        return v
    idx = np.flatnonzero(ok)
    inner = np.arange(idx[0], idx[-1] + 1)
    gaps = inner[~ok[inner]]
    v[gaps] = np.interp(x[gaps], x[ok], v[ok])
    return v


def derive_panel(raw: RawTable, recipe: DerivationRecipe, spec: LongTableSpec) -> PanelDataset:
    """Apply ``recipe`` subject by subject and assemble a panel."""
    recipe.check(spec)
    cols = raw.columns
    sid = cols[spec.role("subject")]
    time_ = cols[spec.role("time")]
    act = cols.get(spec.role("activity")) if spec.role("activity") else None
    hr_col = spec.role("heart_rate")
    cov_names = list(spec.covariates)

    order_ids = list(dict.fromkeys(sid.tolist()))
    warnings = []
    out = {k: [] for k in ("subject", "t", "A", "Y", "X", "p")}
    dropped = {"null_activity": 0, "missing_values": 0, "downsampled": 0}
    for s in order_ids:
        if s is None:
            dropped["missing_values"] += int(sum(v is None for v in sid))
            continue
        rows = np.flatnonzero(sid == s)
        if np.any(np.isnan(time_[rows])):
            raise DataError(f"subject {s!r}: missing timestamps")
        rows = rows[np.argsort(time_[rows], kind="stable")]
        x = time_[rows]
        sub = {c: cols[c][rows] for c in cols}
        if hr_col and recipe.hr_interpolation == "linear":
            sub[hr_col] = interpolate_gaps(x, sub[hr_col])
        keep = np.ones(len(rows), dtype=bool)
        if act is not None:
            null = np.array([recipe.is_null(v) for v in sub[spec.role("activity")]], dtype=bool)
            dropped["null_activity"] += int((null & keep).sum())
            keep &= ~null
        needed = list(cov_names)
        for key in ("outcome", "treatment", "heart_rate", "p_known"):
            c = spec.role(key)
            if c and c not in needed and (key != "p_known"):
                needed.append(c)
        miss = np.zeros(len(rows), dtype=bool)
        for c in needed:
            miss |= np.isnan(sub[c]) if sub[c].dtype.kind == "f" else np.array([v is None for v in sub[c]])
        dropped["missing_values"] += int((miss & keep).sum())
        keep &= ~miss
        sel = np.flatnonzero(keep)
        stride = int(recipe.downsample_stride)
        if stride > 1:
            dropped["downsampled"] += len(sel) - len(sel[::stride])
            sel = sel[::stride]
        if sel.size == 0:
            warnings.append(f"subject {s!r}: no usable rows after filtering; dropped")
            continue
        labels = [recipe.label_name(v) for v in sub[spec.role("activity")][sel]] if act is not None else None
        if recipe.outcome_rule == "activity-class":
            Y = np.array([0 if lab in recipe.sedentary_set else 1 for lab in labels], dtype=np.int64)
        else:
            Y = _binary(sub[spec.role("outcome")][sel], "outcome", s)
        if recipe.treatment_rule == "hr-threshold":
            A = (sub[hr_col][sel] > recipe.hr_cutoff).astype(np.int64)
        elif recipe.treatment_rule == "locomotion-set":
            A = np.array([1 if lab in recipe.locomotion_set else 0 for lab in labels], dtype=np.int64)
        else:
            A = _binary(sub[spec.role("treatment")][sel], "treatment", s)
        pk = sub[spec.role("p_known")][sel] if spec.role("p_known") else np.full(sel.size, np.nan)
        out["subject"].extend([s] * sel.size)
        out["t"].append(np.arange(1, sel.size + 1))
        out["A"].append(A)
        out["Y"].append(Y)
        out["X"].append(np.column_stack([sub[c][sel] for c in cov_names]))
        out["p"].append(pk)
    if not out["t"]:
        raise DataError("every subject was dropped during derivation: " + "; ".join(warnings))
    meta = {"source": str(spec.path), "source_digest": raw.digest, "recipe": recipe.to_dict(),
            "input_rows": raw.n_rows, "dropped": dropped, "warnings": warnings}
    return PanelDataset(np.array(out["subject"], dtype=object), np.concatenate(out["t"]),
                        np.concatenate(out["A"]), np.concatenate(out["Y"]),
                        np.ones(sum(len(t) for t in out["t"]), dtype=np.int64), np.vstack(out["X"]),
                        np.concatenate(out["p"]), tuple(cov_names), recipe.moderators, meta)


def _binary(v, name, subject):
    if np.any((v != 0) & (v != 1)):
        raise DataError(f"subject {subject!r}: {name} column must be 0/1")
    return v.astype(np.int64)


# ---------------------------------------------------------------------------
# scenario covariate variants

def sensor_group(name: str) -> str:
    """Classify a covariate name as 'hr', 'chest', 'ankle', 'arm' or 'other'."""
    s = name.lower()
    if s in ("hr", "bpm") or s.startswith("hr_") or "heart" in s or "ecg" in s:
        return "hr"
    for group, tokens in (("chest", ("chest",)), ("ankle", ("ankle",)), ("arm", ("hand", "wrist", "arm"))):
        if any(tok in s for tok in tokens):
            return group
    return "other"


_SCENARIO_GROUPS = {
    "S1": None,
    "S2": {"chest"},
    "S3": {"chest", "ankle"},
    "S4": {"chest", "ankle", "arm", "other"},
}


def scenario_slices(panel: PanelDataset, scenario_id: str) -> PanelDataset:
    """Covariate-set variant: S1 full, S2 chest-only, S3 chest+ankle, S4 heart-rate-free."""
    if scenario_id not in _SCENARIO_GROUPS:
        raise ConfigurationError(f"unknown scenario {scenario_id!r}; expected one of {SCENARIO_IDS}")
    groups = _SCENARIO_GROUPS[scenario_id]
    names = list(panel.covariate_names)
    keep = names if groups is None else [c for c in names if sensor_group(c) in groups]
    idx = panel.column_index(keep)
    meta = dict(panel.meta)
    meta["scenario"] = scenario_id
    return panel.replace(X=panel.X[:, idx], covariate_names=tuple(keep),
                         moderator_names=tuple(m for m in panel.moderator_names if m in keep), meta=meta)


# ---------------------------------------------------------------------------
# panel archive (JSON, bit-exact round trip)

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(_jsonable(v) for v in obj)
    return obj


def _id(v):
    return v.item() if isinstance(v, np.generic) else v


def panel_to_dict(panel: PanelDataset) -> dict:
    starts = panel.subject_starts()
    subjects = []
    for g in range(len(starts) - 1):
        a, b = int(starts[g]), int(starts[g + 1])
        rows = [[int(panel.t[i]), int(panel.A[i]), int(panel.Y[i]), int(panel.I[i]),
                 None if np.isnan(panel.p_known[i]) else float(panel.p_known[i]),
                 [float(v) for v in panel.X[i]]] for i in range(a, b)]
        subjects.append({"subject_id": _id(panel.subject[a]), "rows": rows})
    return {"format": ARCHIVE_FORMAT, "version": ARCHIVE_VERSION,
            "covariate_names": list(panel.covariate_names), "moderator_names": list(panel.moderator_names),
            "meta": _jsonable(panel.meta), "row_fields": ["t", "A", "Y", "I", "p_known", "covariates"],
            "subjects": subjects}


def panel_from_dict(doc: dict) -> PanelDataset:
    if doc.get("format") != ARCHIVE_FORMAT:
        raise DataError(f"not a panel archive (format={doc.get('format')!r})")
    if doc.get("version") != ARCHIVE_VERSION:
        raise DataError(f"unsupported panel archive version {doc.get('version')!r}")
    names = tuple(doc["covariate_names"])
    sid, t, A, Y, I, p, X = [], [], [], [], [], [], []
    for s in doc["subjects"]:
        for r in s["rows"]:
            sid.append(s["subject_id"])
            t.append(r[0])
            A.append(r[1])
            Y.append(r[2])
            I.append(r[3])
            p.append(math.nan if r[4] is None else r[4])
            X.append(r[5])
    X = np.array(X, dtype=float).reshape(len(t), len(names))
    return PanelDataset(np.array(sid, dtype=object), np.array(t, dtype=np.int64), np.array(A), np.array(Y),
                        np.array(I), X, np.array(p, dtype=float), names, tuple(doc["moderator_names"]),
                        doc.get("meta", {}))


def save_panel(panel: PanelDataset, path) -> str:
    """Write the archive; returns the content digest."""
    text = json.dumps(panel_to_dict(panel), allow_nan=False, separators=(",", ":"))
    Path(path).write_text(text, encoding="utf-8")
    return _file_digest(text.encode("utf-8"))


def load_panel(path) -> PanelDataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read panel archive {path}: {exc}") from None
    return panel_from_dict(doc)


# ---------------------------------------------------------------------------
# dataset presets and synthetic fixtures

PAMAP2_COLUMNS = {"subject": "subject", "time": "timestamp", "activity": "activity_id",
                  "heart_rate": "heart_rate",
                  "covariates": ["heart_rate", "hand_acc_x", "hand_temp", "chest_acc_x", "chest_acc_z",
                                 "chest_temp", "ankle_acc_x", "ankle_temp"]}
MHEALTH_COLUMNS = {"subject": "subject", "time": "time", "activity": "label",
                   "covariates": ["chest_acc_x", "chest_acc_z", "ecg_lead1", "ankle_acc_x", "ankle_gyro_x",
                                  "arm_acc_x", "arm_gyro_x"]}

DATASETS = {"pamap2": (PAMAP2_COLUMNS, PAMAP2_RECIPE, " "), "mhealth": (MHEALTH_COLUMNS, MHEALTH_RECIPE, ",")}


def dataset_spec(name: str, path, delimiter: Optional[str] = None) -> tuple:
    """(LongTableSpec, DerivationRecipe) for a named dataset layout."""
    if name not in DATASETS:
        raise ConfigurationError(f"unknown dataset recipe {name!r}; expected one of {sorted(DATASETS)}")
    cmap, recipe, delim = DATASETS[name]
    return LongTableSpec(str(path), dict(cmap), delimiter or delim), recipe


def _activity_blocks(rng, n_rows, labels, block):
    seq = []
    while len(seq) < n_rows:
        seq.extend([int(rng.choice(labels))] * int(rng.integers(block // 2, block + 1)))
    return np.array(seq[:n_rows])


def write_pamap2_fixture(path, n_subjects: int = 9, rows_per_subject: int = 120, seed: int = 1) -> Path:
    """Synthetic PAMAP2-layout table (space-delimited, NaN heart-rate gaps, transient label 0)."""
    rng = np.random.default_rng(seed)
    labels = [0, 1, 2, 3, 4, 5, 6, 7, 12, 13, 16, 17, 24]
    intensity = {0: 0.5, 1: 0.0, 2: 0.1, 3: 0.2, 4: 0.8, 5: 1.8, 6: 1.2, 7: 1.0, 12: 1.4, 13: 0.9,
                 16: 0.7, 17: 0.3, 24: 2.0}
    cols = ["timestamp", "activity_id", "heart_rate", "hand_acc_x", "hand_temp", "chest_acc_x",
            "chest_acc_z", "chest_temp", "ankle_acc_x", "ankle_temp", "subject"]
    lines = [" ".join(cols)]
    for s in range(101, 101 + n_subjects):
        act = _activity_blocks(rng, rows_per_subject, labels, 12)
        lvl = np.array([intensity[a] for a in act])
        hr = 75 + 35 * lvl + rng.normal(0, 8, rows_per_subject) + rng.normal(0, 6)
        hr[rng.random(rows_per_subject) < 0.15] = np.nan
        for i in range(rows_per_subject):
            vals = [0.01 * (i + 1), act[i], hr[i], lvl[i] * 3 + rng.normal(0, 1), 32 + rng.normal(0, 0.5),
                    9.5 + lvl[i] * rng.normal(0, 1.5), rng.normal(0, 1) + lvl[i], 35 + rng.normal(0, 0.4),
                    9.3 + lvl[i] * 2 + rng.normal(0, 1), 33 + rng.normal(0, 0.5)]
            lines.append(" ".join("NaN" if isinstance(v, float) and math.isnan(v) else f"{v:.6g}"
                                  for v in vals) + f" {s}")
    p = Path(path)
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def write_mhealth_fixture(path, n_subjects: int = 10, rows_per_subject: int = 120, seed: int = 2) -> Path:
    """Synthetic mHealth-layout table (comma-delimited, null label 0, labels 1-12)."""
    rng = np.random.default_rng(seed)
    labels = list(range(0, 13))
    intensity = {0: 0.3, 1: 0.0, 2: 0.0, 3: 0.0, 4: 0.8, 5: 1.0, 6: 0.5, 7: 0.4, 8: 0.6, 9: 1.2, 10: 1.6,
                 11: 2.0, 12: 1.8}
    cols = ["subject", "time", "label", "chest_acc_x", "chest_acc_z", "ecg_lead1", "ankle_acc_x",
            "ankle_gyro_x", "arm_acc_x", "arm_gyro_x"]
    lines = [",".join(cols)]
    for s in range(1, n_subjects + 1):
        act = _activity_blocks(rng, rows_per_subject, labels, 10)
        for i in range(rows_per_subject):
            lvl = intensity[act[i]]
            vals = [0.02 * i, act[i], 9.7 + lvl * rng.normal(0, 2), rng.normal(0, 1) + lvl,
                    rng.normal(0, 0.3 + 0.2 * lvl), 1.5 * lvl + rng.normal(0, 1), rng.normal(0, 0.2 + lvl),
                    rng.normal(-9, 1) + lvl, rng.normal(0, 0.3 + 0.4 * lvl)]
            lines.append(f"subject{s}," + ",".join(f"{v:.6g}" for v in vals))
    p = Path(path)
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p

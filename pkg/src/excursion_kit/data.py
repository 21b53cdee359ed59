"""Canonical long-format panel of a micro-randomized trial.

Rows are stored columnar (one numpy array per field) and grouped contiguously
by subject in time order. ``SubjectRecord`` / ``DecisionRow`` views are
materialized on demand for callers that want per-row objects.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class DecisionRow:
    t: int
    A: int
    Y: int
    I: int
    covariates: tuple
    p_known: float | None = None


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: Any
    rows: tuple


@dataclass(frozen=True)
class Violation:
    subject_id: Any
    t: Any
    field: str
    message: str

    def __str__(self):
        return f"subject={self.subject_id!r} t={self.t!r} {self.field}: {self.message}"


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Immutable MRT panel.

    Parameters
    ----------
    subject : array of subject ids, one per row (rows of a subject contiguous)
    t, A, Y, I : per-row decision index, treatment, outcome, availability
    X : (n_rows, n_covariates) covariate matrix
    p_known : per-row design probability, NaN where unknown
    covariate_names, moderator_names : column identifiers; moderators are the reduced set S
    meta : free-form provenance
    """

    subject: np.ndarray
    t: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    I: np.ndarray
    X: np.ndarray
    p_known: np.ndarray
    covariate_names: tuple = ()
    moderator_names: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1) if n else X.reshape(0, len(self.covariate_names))
        p = self.p_known
        if p is None:
            p = np.full(n, np.nan)
        object.__setattr__(self, "subject", _frozen(self.subject, object))
        object.__setattr__(self, "t", _frozen(self.t, np.int64))
        object.__setattr__(self, "A", _frozen(self.A, np.int64))
        object.__setattr__(self, "Y", _frozen(self.Y, np.int64))
        object.__setattr__(self, "I", _frozen(self.I, np.int64))
        object.__setattr__(self, "X", _frozen(X, float))
        object.__setattr__(self, "p_known", _frozen(p, float))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "moderator_names", tuple(self.moderator_names))
        object.__setattr__(self, "meta", dict(self.meta))
        lengths = {len(self.subject), len(self.A), len(self.Y), len(self.I), len(self.p_known), self.X.shape[0]}
        if lengths != {n}:
            raise DataError(f"per-row arrays have inconsistent lengths {sorted(lengths)}")
        if self.X.shape[1] != len(self.covariate_names):
            raise DataError(
                f"covariate matrix has {self.X.shape[1]} columns but {len(self.covariate_names)} names")

    # -- construction -------------------------------------------------
    @classmethod
    def from_subjects(cls, subjects: Iterable[SubjectRecord], covariate_names: Sequence[str],
                      moderator_names: Sequence[str] = (), meta: dict | None = None) -> "PanelDataset":
        sid, t, A, Y, I, X, p = [], [], [], [], [], [], []
        d = len(covariate_names)
        for rec in subjects:
            for row in rec.rows:
                cov = tuple(row.covariates)
                if len(cov) != d:
                    raise DataError(
                        f"subject {rec.subject_id!r} t={row.t}: {len(cov)} covariates, expected {d}")
                sid.append(rec.subject_id)
                t.append(row.t)
                A.append(row.A)
                Y.append(row.Y)
                I.append(row.I)
                X.append(cov)
                p.append(np.nan if row.p_known is None else row.p_known)
        X = np.array(X, dtype=float).reshape(len(t), d)
        return cls(np.array(sid, dtype=object), np.array(t), np.array(A), np.array(Y), np.array(I), X,
                   np.array(p, dtype=float), tuple(covariate_names), tuple(moderator_names), meta or {})

    def replace(self, **changes) -> "PanelDataset":
        kw = dict(subject=self.subject, t=self.t, A=self.A, Y=self.Y, I=self.I, X=self.X,
                  p_known=self.p_known, covariate_names=self.covariate_names,
                  moderator_names=self.moderator_names, meta=self.meta)
        kw.update(changes)
        return PanelDataset(**kw)

    # -- views ----------------------------------------------------------
    @property
    def n_rows(self) -> int:
        return len(self.t)

    @property
    def subject_ids(self) -> list:
        """Subject ids in panel order (first appearance)."""
        return [self.subject[s] for s in self.subject_starts()[:-1]]

    @property
    def n_subjects(self) -> int:
        return len(self.subject_starts()) - 1

    def subject_starts(self) -> np.ndarray:
        """Offsets of each subject's first row, with ``n_rows`` appended."""
        cached = self.__dict__.get("_starts")
        if cached is not None:
            return cached
        n = self.n_rows
        if n == 0:
            starts = np.array([0], dtype=np.int64)
        else:
            change = np.ones(n, dtype=bool)
            change[1:] = self.subject[1:] != self.subject[:-1]
            starts = np.append(np.flatnonzero(change), n).astype(np.int64)
        starts.setflags(write=False)
        self.__dict__["_starts"] = starts
        return starts

    @property
    def available(self) -> np.ndarray:
        """Boolean mask of rows with I = 1."""
        return self.I == 1

    @property
    def subjects(self) -> list:
        out = []
        starts = self.subject_starts()
        for g in range(len(starts) - 1):
            rows = []
            for i in range(starts[g], starts[g + 1]):
                p = self.p_known[i]
                rows.append(DecisionRow(int(self.t[i]), int(self.A[i]), int(self.Y[i]), int(self.I[i]),
                                        tuple(float(v) for v in self.X[i]),
                                        None if np.isnan(p) else float(p)))
            out.append(SubjectRecord(self.subject[starts[g]], tuple(rows)))
        return out

    def column_index(self, columns: Sequence[str]) -> list:
        index = {name: j for j, name in enumerate(self.covariate_names)}
        unknown = [c for c in columns if c not in index]
        if unknown:
            raise ConfigurationError(
                f"unknown covariate column(s) {unknown}; available: {list(self.covariate_names)}")
        return [index[c] for c in columns]

    def available_subject_layout(self):
        """(subject ids, starts) of available rows, grouped by subject.

        Subjects with no available rows are omitted.
        """
        mask = self.available
        sid = self.subject[mask]
        n = len(sid)
        if n == 0:
            return [], np.array([0], dtype=np.int64)
        change = np.ones(n, dtype=bool)
        change[1:] = sid[1:] != sid[:-1]
        starts = np.append(np.flatnonzero(change), n).astype(np.int64)
        return [sid[s] for s in starts[:-1]], starts


def validate(panel: PanelDataset) -> list:
    """Return every structural invariant violation; an empty list means the panel is valid."""
    out = []
    n = panel.n_rows
    if not set(panel.moderator_names) <= set(panel.covariate_names):
        extra = sorted(set(panel.moderator_names) - set(panel.covariate_names))
        out.append(Violation(None, None, "moderator_names", f"not covariates: {extra}"))
    if len(set(panel.covariate_names)) != len(panel.covariate_names):
        out.append(Violation(None, None, "covariate_names", "duplicate names"))
    if n == 0:
        out.append(Violation(None, None, "subjects", "panel has no rows"))
        return out

    starts = panel.subject_starts()
    seen = set()
    for g in range(len(starts) - 1):
        a, b = starts[g], starts[g + 1]
        sid = panel.subject[a]
        if sid in seen:
            out.append(Violation(sid, None, "subject_id", "subject rows not contiguous or id repeated"))
        seen.add(sid)
        ts = panel.t[a:b]
        if ts[0] != 1:
            out.append(Violation(sid, int(ts[0]), "t", "decision times must start at 1"))
        bad = np.flatnonzero(np.diff(ts) <= 0)
        for k in bad:
            out.append(Violation(sid, int(ts[k + 1]), "t", "decision times must be strictly increasing"))

    for name in ("A", "Y", "I"):
        col = getattr(panel, name)
        for i in np.flatnonzero((col != 0) & (col != 1)):
            out.append(Violation(panel.subject[i], int(panel.t[i]), name, f"value {int(col[i])} not in {{0,1}}"))
    p = panel.p_known
    for i in np.flatnonzero(~np.isnan(p) & ((p <= 0) | (p >= 1))):
        out.append(Violation(panel.subject[i], int(panel.t[i]), "p_known",
                             f"value {p[i]!r} outside the open interval (0, 1)"))
    bad_rows = np.flatnonzero(~np.all(np.isfinite(panel.X), axis=1))
    for i in bad_rows:
        cols = [panel.covariate_names[j] for j in np.flatnonzero(~np.isfinite(panel.X[i]))]
        out.append(Violation(panel.subject[i], int(panel.t[i]), "covariates", f"non-finite values in {cols}"))
    return out


def require_valid(panel: PanelDataset) -> None:
    problems = validate(panel)
    if problems:
        head = "; ".join(str(v) for v in problems[:5])
        more = f" (+{len(problems) - 5} more)" if len(problems) > 5 else ""
        raise DataError(f"invalid panel: {head}{more}")


def design_matrix(panel: PanelDataset, columns: Sequence[str], add_intercept: bool = True) -> np.ndarray:
    """Row-aligned design over available rows in (subject, t) panel order."""
    idx = panel.column_index(columns)
    X = panel.X[panel.available][:, idx]
    if add_intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
    return np.ascontiguousarray(X, dtype=float)

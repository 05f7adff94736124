"""Trial data ingestion, reshaping and missingness profiling.

A :class:`WideDataset` holds one row per subject: an id, a 0/1 treatment
indicator, baseline covariates and one outcome column per visit.  Missing
cells are stored as ``NaN`` (:data:`MISSING`).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError

MISSING = np.nan
MISSING_TOKENS = frozenset({"", "NA"})

KINDS = ("ordinal", "binary", "continuous", "categorical")
ROLES = ("outcome", "covariate", "treatment", "id")

__all__ = [
    "MISSING",
    "VariableMeta",
    "WideDataset",
    "MissingPattern",
    "load_wide_csv",
    "long_to_wide",
    "wide_to_long",
    "missing_pattern",
    "default_model_order",
    "pattern_report",
    "drop_no_followup",
]


@dataclass(frozen=True)
class VariableMeta:
    """Type and role of one column.

    ``levels`` is the category count K for ordinal variables and L for
    categorical ones; binary variables are coded 0/1 and ignore it.
    ``visit`` is the 0-based visit index of an outcome column.
    """

    name: str
    kind: str = "continuous"
    role: str = "covariate"
    levels: int | None = None
    visit: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"{self.name}: unknown role {self.role!r}")
        if self.kind in ("ordinal", "categorical"):
            if self.levels is None or self.levels < 2:
                raise SchemaError(f"{self.name}: {self.kind} needs levels >= 2")
        if self.role == "outcome":
            if self.kind not in ("ordinal", "binary"):
                raise SchemaError(f"{self.name}: outcomes must be ordinal or binary")
            if self.visit is None or self.visit < 0:
                raise SchemaError(f"{self.name}: outcome needs a visit index")
        if self.role == "treatment" and self.kind != "binary":
            raise SchemaError(f"{self.name}: treatment must be binary")

    @property
    def support(self):
        """Admissible coded values, or None for continuous/id columns."""
        if self.role == "id" or self.kind == "continuous":
            return None
        if self.kind == "binary":
            return np.array([0.0, 1.0])
        return np.arange(1, self.levels + 1, dtype=float)

    @property
    def n_levels(self):
        if self.kind == "binary":
            return 2
        return self.levels


def _validate_schema(meta):
    names = [m.name for m in meta]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate variable names in schema")
    ids = [m for m in meta if m.role == "id"]
    trt = [m for m in meta if m.role == "treatment"]
    outs = [m for m in meta if m.role == "outcome"]
    if len(ids) != 1:
        raise SchemaError("schema needs exactly one id variable")
    if len(trt) != 1:
        raise SchemaError("schema needs exactly one treatment variable")
    if not outs:
        raise SchemaError("schema needs at least one outcome visit")
    visits = sorted(m.visit for m in outs)
    if visits != list(range(len(outs))):
        raise SchemaError("outcome visit indices must be contiguous from 0")
    if len({(m.kind, m.n_levels) for m in outs}) != 1:
        raise SchemaError("all outcome columns must share kind and category count")


class WideDataset:
    """Subject-per-row trial table with typed columns.

    Parameters
    ----------
    frame : pandas.DataFrame
        One row per subject.  Non-id columns are numeric; missing cells are NaN.
    meta : sequence of VariableMeta
        Column descriptions.  Every column of ``frame`` must be described.
    """

    def __init__(self, frame: pd.DataFrame, meta: Sequence[VariableMeta]):
        meta = tuple(meta)
        _validate_schema(meta)
        names = [m.name for m in meta]
        unknown = [c for c in frame.columns if c not in names]
        if unknown:
            raise SchemaError(f"unknown column(s): {', '.join(map(str, unknown))}")
        absent = [n for n in names if n not in frame.columns]
        if absent:
            raise SchemaError(f"column(s) missing from data: {', '.join(absent)}")
        frame = frame[names].copy()
        frame.reset_index(drop=True, inplace=True)
        self._meta = {m.name: m for m in meta}
        self.meta = meta
        id_name = self.id_name
        frame[id_name] = frame[id_name].astype(str)
        for m in meta:
            if m.role != "id":
                frame[m.name] = frame[m.name].astype(float)
        self.frame = frame
        self._check()

    def _check(self):
        if len(self.frame) == 0:
            raise DataError("no subjects")
        ids = self.frame[self.id_name]
        if ids.duplicated().any():
            dup = ids[ids.duplicated()].iloc[0]
            raise DataError(f"duplicate subject id {dup!r}")
        tx = self.frame[self.treatment_name].to_numpy()
        if np.isnan(tx).any():
            raise DataError("treatment column has missing values")
        for m in self.meta:
            support = m.support
            if support is None:
                continue
            col = self.frame[m.name].to_numpy()
            obs = col[~np.isnan(col)]
            bad = ~np.isin(obs, support)
            if bad.any():
                raise DataError(f"{m.name}: value {obs[bad][0]:g} outside {m.kind} levels")

    # -- accessors -----------------------------------------------------
    def var(self, name: str) -> VariableMeta:
        try:
            return self._meta[name]
        except KeyError:
            raise SchemaError(f"unknown variable {name!r}") from None

    def __contains__(self, name):
        return name in self._meta

    def __len__(self):
        return len(self.frame)

    @property
    def n(self) -> int:
        return len(self.frame)

    @property
    def id_name(self) -> str:
        return next(m.name for m in self.meta if m.role == "id")

    @property
    def treatment_name(self) -> str:
        return next(m.name for m in self.meta if m.role == "treatment")

    @property
    def outcome_names(self) -> list[str]:
        outs = sorted((m for m in self.meta if m.role == "outcome"), key=lambda m: m.visit)
        return [m.name for m in outs]

    @property
    def covariate_names(self) -> list[str]:
        return [m.name for m in self.meta if m.role == "covariate"]

    @property
    def J(self) -> int:
        """Index of the last visit (visits run 0..J)."""
        return len(self.outcome_names) - 1

    @property
    def K(self) -> int:
        return self.var(self.outcome_names[0]).n_levels

    @property
    def ids(self) -> np.ndarray:
        return self.frame[self.id_name].to_numpy()

    @property
    def treatment(self) -> np.ndarray:
        return self.frame[self.treatment_name].to_numpy().astype(int)

    def column(self, name: str) -> np.ndarray:
        self.var(name)
        return self.frame[name].to_numpy(dtype=float)

    def values(self, names: Iterable[str]) -> np.ndarray:
        names = list(names)
        for nm in names:
            self.var(nm)
        return self.frame[names].to_numpy(dtype=float)

    def outcomes(self) -> np.ndarray:
        return self.values(self.outcome_names)

    def with_values(self, updates: dict) -> "WideDataset":
        """Return a copy with some columns replaced."""
        frame = self.frame.copy()
        for name, col in updates.items():
            self.var(name)
            frame[name] = np.asarray(col, dtype=float)
        return WideDataset(frame, self.meta)

    def subset(self, rows) -> "WideDataset":
        return WideDataset(self.frame.iloc[np.asarray(rows)], self.meta)

    def equals(self, other: "WideDataset") -> bool:
        return self.meta == other.meta and self.frame.equals(other.frame)

    def __repr__(self):
        return f"WideDataset(n={self.n}, J={self.J}, K={self.K}, columns={list(self.frame.columns)})"

    # -- output --------------------------------------------------------
    def to_csv(self, path=None) -> str:
        """Write CSV with missing cells as empty strings; returns the text."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([m.name for m in self.meta])
        cols = [self.frame[m.name].to_numpy() for m in self.meta]
        for row in zip(*cols):
            writer.writerow([format_cell(v, m) for v, m in zip(row, self.meta)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def format_cell(value, meta: VariableMeta) -> str:
    if meta.role == "id":
        return str(value)
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if meta.kind == "continuous":
        return repr(float(value))
    return str(int(value))


def _parse_cell(text, meta, row, col):
    text = text.strip()
    if meta.role == "id":
        if text in MISSING_TOKENS:
            raise DataError(f"row {row}, column {col!r}: missing subject id")
        return text
    if text in MISSING_TOKENS:
        return MISSING
    if meta.kind == "continuous":
        try:
            return float(text)
        except ValueError:
            raise DataError(f"row {row}, column {col!r}: cannot parse {text!r} as a number") from None
    try:
        value = int(text)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: cannot parse {text!r} as a category") from None
    if value not in meta.support:
        raise DataError(
            f"row {row}, column {col!r}: category {value} outside levels "
            f"{int(meta.support[0])}..{int(meta.support[-1])}"
        )
    return float(value)


def load_wide_csv(path, schema: Sequence[VariableMeta]) -> WideDataset:
    """Read a wide CSV file and type it against ``schema``.

    Empty cells and ``NA`` are read as missing.  Row numbers in error
    messages count the header as row 1.
    """
    schema = tuple(schema)
    _validate_schema(schema)
    by_name = {m.name: m for m in schema}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file (header row required)") from None
        unknown = [h for h in header if h not in by_name]
        if unknown:
            raise SchemaError(f"unknown column(s) in {path}: {', '.join(unknown)}")
        absent = [m.name for m in schema if m.name not in header]
        if absent:
            raise SchemaError(f"column(s) missing from {path}: {', '.join(absent)}")
        records = {h: [] for h in header}
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"row {rownum}: expected {len(header)} fields, got {len(row)}")
            for h, cell in zip(header, row):
                records[h].append(_parse_cell(cell, by_name[h], rownum, h))
    if not records[header[0]]:
        raise DataError("no subjects")
    return WideDataset(pd.DataFrame(records), schema)


def _time_label(t):
    if isinstance(t, (float, np.floating)) and float(t).is_integer():
        return str(int(t))
    return str(t)


def long_to_wide(
    long: pd.DataFrame,
    id_col: str,
    time_col: str,
    value_col: str,
    prefix: str = "y",
    *,
    treatment: str,
    covariates: dict | None = None,
    kind: str = "ordinal",
    levels: int | None = None,
    times: Sequence | None = None,
) -> WideDataset:
    """Pivot one-row-per-visit data to one row per subject.

    Parameters
    ----------
    long : DataFrame
        Long-format records.  ``(id_col, time_col)`` pairs must be unique.
    prefix : str
        Outcome columns are named ``prefix + time``.
    treatment : str
        Subject-level 0/1 treatment column in ``long``.
    covariates : dict, optional
        Subject-level covariate columns mapped to ``(kind, levels)``
        tuples.  Values must be constant within subject.
    kind, levels : outcome type and category count (inferred when None).
    times : sequence, optional
        Full visit grid; defaults to the sorted distinct times in ``long``.
        Absent ``(id, time)`` combinations become missing.
    """
    covariates = dict(covariates or {})
    dup = long.duplicated([id_col, time_col])
    if dup.any():
        row = long.loc[dup, [id_col, time_col]].iloc[0]
        raise DataError(f"ambiguous data: duplicate record for id={row[id_col]!r}, time={row[time_col]!r}")
    if times is None:
        times = sorted(long[time_col].dropna().unique())
    times = list(times)
    ids = pd.unique(long[id_col])
    wide = long.pivot(index=id_col, columns=time_col, values=value_col)
    wide = wide.reindex(index=ids, columns=times)
    out_names = [f"{prefix}{_time_label(t)}" for t in times]
    frame = pd.DataFrame({id_col: [str(i) for i in ids]})
    for name, t in zip(out_names, times):
        frame[name] = wide[t].to_numpy(dtype=float)

    subject_cols = {treatment: ("binary", None), **covariates}
    for col, _ in subject_cols.items():
        per_subject = long.groupby(id_col, sort=False)[col].nunique(dropna=True)
        if (per_subject > 1).any():
            bad = per_subject[per_subject > 1].index[0]
            raise DataError(f"column {col!r} varies within subject {bad!r}")
        first = long.groupby(id_col, sort=False)[col].first()
        frame[col] = first.reindex(ids).to_numpy(dtype=float)

    if levels is None and kind == "ordinal":
        levels = int(np.nanmax(frame[out_names].to_numpy()))
    meta = [VariableMeta(id_col, "continuous", "id")]
    meta.append(VariableMeta(treatment, "binary", "treatment"))
    for col, (ckind, clevels) in covariates.items():
        meta.append(VariableMeta(col, ckind, "covariate", clevels))
    for j, name in enumerate(out_names):
        meta.append(VariableMeta(name, kind, "outcome", levels, visit=j))
    frame = frame[[m.name for m in meta]]
    return WideDataset(frame, meta)


def wide_to_long(ds: WideDataset, time_col: str = "time", value_col: str = "value", prefix: str = "y") -> pd.DataFrame:
    """Inverse of :func:`long_to_wide`; emits observed cells only."""
    recs = []
    sub_cols = [ds.treatment_name] + ds.covariate_names
    for name in ds.outcome_names:
        suffix = name[len(prefix):] if name.startswith(prefix) else ""
        try:
            t = int(suffix)
        except ValueError:
            t = ds.var(name).visit
        part = ds.frame[[ds.id_name] + sub_cols].copy()
        part[time_col] = t
        part[value_col] = ds.frame[name].to_numpy()
        recs.append(part[~np.isnan(part[value_col].to_numpy())])
    out = pd.concat(recs, ignore_index=True)
    order = {i: k for k, i in enumerate(ds.ids)}
    out["_o"] = out[ds.id_name].map(order)
    out = out.sort_values(["_o", time_col], kind="stable").drop(columns="_o")
    return out.reset_index(drop=True)


@dataclass(frozen=True)
class MissingPattern:
    """Missingness structure of a dataset.

    ``dropout[i]`` is the last visit with an observed outcome (0 when none);
    ``intermittent[i]`` holds missing visits strictly before it.
    ``patterns`` lists distinct observed/missing rows over ``variables``
    (True = observed) with their subject counts, most frequent first.
    """

    variables: tuple
    counts: dict
    dropout: np.ndarray
    intermittent: tuple
    monotone: bool
    patterns: tuple = field(default=())

    @property
    def n_subjects(self) -> int:
        return len(self.dropout)


def missing_pattern(ds: WideDataset) -> MissingPattern:
    names = [m.name for m in ds.meta if m.role != "id"]
    vals = ds.values(names)
    miss = np.isnan(vals)
    counts = {nm: int(c) for nm, c in zip(names, miss.sum(axis=0))}

    obs_y = ~np.isnan(ds.outcomes())
    J = ds.J
    any_obs = obs_y.any(axis=1)
    last = np.where(any_obs, J - np.argmax(obs_y[:, ::-1], axis=1), 0)
    intermittent = tuple(
        frozenset(int(j) for j in np.flatnonzero(~obs_y[i, : last[i]])) for i in range(ds.n)
    )
    monotone = all(len(s) == 0 for s in intermittent)

    keys, inverse, freq = np.unique(~miss, axis=0, return_inverse=True, return_counts=True)
    first_seen = [int(np.flatnonzero(inverse.ravel() == k)[0]) for k in range(len(keys))]
    order = sorted(range(len(keys)), key=lambda k: (-freq[k], first_seen[k]))
    patterns = tuple((tuple(bool(b) for b in keys[k]), int(freq[k])) for k in order)
    return MissingPattern(tuple(names), counts, last.astype(int), intermittent, monotone, patterns)


def default_model_order(ds: WideDataset, main_formula) -> list[str]:
    """Incomplete predictors of ``main_formula`` sorted by missing count.

    Ties go to the lower visit index (outcomes before covariates), then to
    formula position.  The formula response is excluded: it is modelled last.
    """
    keys = []
    for pos, name in enumerate(main_formula.predictors):
        meta = ds.var(name)
        count = int(np.isnan(ds.column(name)).sum())
        if count == 0:
            continue
        visit = meta.visit if meta.role == "outcome" else math.inf
        keys.append((count, visit, pos, name))
    return [k[-1] for k in sorted(keys)]


def pattern_report(mp: MissingPattern, format: str = "text") -> str:
    """Render the distinct missingness patterns as text, CSV or SVG."""
    if format == "text":
        width = max(len(v) for v in mp.variables)
        head = "  ".join(v.rjust(max(width, 3)) for v in mp.variables)
        lines = [f"{'count':>6}  {head}"]
        for pat, cnt in mp.patterns:
            cells = "  ".join(("obs" if o else "-").rjust(max(width, 3)) for o in pat)
            lines.append(f"{cnt:>6}  {cells}")
        miss = "  ".join(str(mp.counts[v]).rjust(max(width, 3)) for v in mp.variables)
        lines.append(f"{'miss':>6}  {miss}")
        return "\n".join(lines) + "\n"
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["count", *mp.variables])
        for pat, cnt in mp.patterns:
            w.writerow([cnt, *(1 if o else 0 for o in pat)])
        return buf.getvalue()
    if format == "svg":
        from .plotting import pattern_svg

        return pattern_svg(mp)
    raise ValueError(f"unknown report format {format!r}")


def drop_no_followup(ds: WideDataset) -> WideDataset:
    """Remove subjects without any observed post-baseline outcome."""
    keep = missing_pattern(ds).dropout > 0
    return ds.subset(np.flatnonzero(keep))

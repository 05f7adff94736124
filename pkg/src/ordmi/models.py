"""Formulas and the ordered sequence of per-variable imputation models."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .data import WideDataset, default_model_order
from .errors import DataError, FormulaError

__all__ = [
    "Formula",
    "ModelSpec",
    "SequenceSpec",
    "FAMILY_LINKS",
    "parse_formula",
    "build_sequence",
    "list_models",
    "encode_design",
    "DesignEncoder",
]

# family -> admissible links for GLM imputation models
FAMILY_LINKS = {
    "gaussian": ("identity", "log", "inverse"),
    "binomial": ("logit", "probit", "log", "cloglog"),
    "Gamma": ("inverse", "identity", "log"),
    "poisson": ("log", "identity"),
}
SUPPORTED = {("gaussian", "identity"), *(("binomial", lk) for lk in FAMILY_LINKS["binomial"])}

_NAME = re.compile(r"[A-Za-z_.][A-Za-z0-9_.]*")


@dataclass(frozen=True)
class Formula:
    response: str
    predictors: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if self.response in self.predictors:
            raise FormulaError(f"response {self.response!r} also appears as a predictor")
        seen = set()
        for p in self.predictors:
            if p in seen:
                raise FormulaError(f"duplicate predictor {p!r}")
            seen.add(p)

    def __str__(self):
        rhs = " + ".join(self.predictors) if self.predictors else "1"
        return f"{self.response} ~ {rhs}"


def parse_formula(src: str) -> Formula:
    """Parse ``"resp ~ p1 + p2 + ..."``; ``"resp ~ 1"`` is intercept-only."""
    if not src or not src.strip():
        raise FormulaError("empty formula", 0)
    if src.count("~") != 1:
        pos = src.find("~", src.find("~") + 1) if "~" in src else len(src)
        raise FormulaError("formula needs exactly one '~'", pos)
    lhs, rhs = src.split("~")
    tilde = len(lhs)
    resp = lhs.strip()
    if not _NAME.fullmatch(resp):
        raise FormulaError(f"invalid response name {resp!r}", len(lhs) - len(lhs.lstrip()))
    if not rhs.strip():
        raise FormulaError("missing right-hand side", tilde + 1)
    preds = []
    offset = tilde + 1
    for term in rhs.split("+"):
        name = term.strip()
        pos = offset + len(term) - len(term.lstrip())
        if not name:
            raise FormulaError("empty term", pos)
        if name == "1":
            offset += len(term) + 1
            continue
        if not _NAME.fullmatch(name):
            raise FormulaError(f"invalid term {name!r} (only additive main effects are supported)", pos)
        if name in preds:
            raise FormulaError(f"duplicate predictor {name!r}", pos)
        preds.append(name)
        offset += len(term) + 1
    return Formula(resp, tuple(preds))


@dataclass(frozen=True)
class ModelSpec:
    """One conditional model: ``target ~ predictors`` with family and link.

    ``model_kind`` is ``cumulative_logit`` for ordinal targets,
    ``glm_binomial`` for binary ones and ``lm`` for continuous ones.
    """

    target: str
    predictors: tuple
    family: str
    link: str
    model_kind: str

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if self.family not in FAMILY_LINKS or self.link not in FAMILY_LINKS[self.family]:
            raise FormulaError(f"{self.target}: invalid family/link pair ({self.family}, {self.link})")
        if (self.family, self.link) not in SUPPORTED:
            raise FormulaError(
                f"{self.target}: family/link ({self.family}, {self.link}) is not supported for imputation"
            )
        if self.model_kind == "cumulative_logit" and (self.family, self.link) != ("binomial", "logit"):
            raise FormulaError(f"{self.target}: cumulative logit models use the logit link")
        if self.model_kind not in ("cumulative_logit", "glm_binomial", "lm"):
            raise FormulaError(f"{self.target}: unknown model kind {self.model_kind!r}")

    @property
    def formula(self) -> Formula:
        return Formula(self.target, self.predictors)

    def __str__(self):
        return str(self.formula)


@dataclass(frozen=True)
class SequenceSpec:
    imputation_models: tuple
    analysis_model: ModelSpec
    ord_cov_dummy: bool = False
    ref_level: int = 1

    @property
    def models(self) -> tuple:
        """Every model in sampling order, analysis model last."""
        return tuple(self.imputation_models) + (self.analysis_model,)

    @property
    def targets(self) -> list:
        return [m.target for m in self.models]


def _model_for(ds, target, predictors, links):
    meta = ds.var(target)
    link = (links or {}).get(target)
    if meta.kind == "ordinal":
        if link not in (None, "logit"):
            raise FormulaError(f"{target}: ordinal targets use the logit link")
        return ModelSpec(target, predictors, "binomial", "logit", "cumulative_logit")
    if meta.kind == "binary":
        return ModelSpec(target, predictors, "binomial", link or "logit", "glm_binomial")
    if meta.kind == "continuous":
        return ModelSpec(target, predictors, "gaussian", link or "identity", "lm")
    raise FormulaError(f"{target}: no imputation model for incomplete {meta.kind} variables")


def build_sequence(
    main: Formula,
    ds: WideDataset,
    order=None,
    ord_cov_dummy: bool = False,
    links: dict | None = None,
    ref_level: int = 1,
) -> SequenceSpec:
    """Order the incomplete predictors of ``main`` into nested models.

    Model t imputes the t-th ordered variable from every fully observed
    predictor plus all earlier targets, listed in formula order.  The
    analysis model (``main`` itself) comes last.
    """
    for name in (main.response, *main.predictors):
        if name not in ds:
            raise FormulaError(f"formula references unknown column {name!r}")
        meta = ds.var(name)
        if meta.role == "id":
            raise FormulaError(f"id column {name!r} cannot appear in a formula")
        if np.isnan(ds.column(name)).all():
            raise DataError(f"column {name!r} is entirely missing and cannot inform any model")
    if ds.var(main.response).role == "treatment":
        raise FormulaError("the treatment variable cannot be the response")

    incomplete = default_model_order(ds, main)
    if order is None:
        order = incomplete
    else:
        order = list(order)
        if sorted(order) != sorted(incomplete) or len(set(order)) != len(order):
            raise FormulaError(
                f"model order {order} is not a permutation of the incomplete predictors {incomplete}"
            )
    complete = {p for p in main.predictors if p not in incomplete}
    models = []
    done = set(complete)
    for target in order:
        preds = tuple(p for p in main.predictors if p in done)
        models.append(_model_for(ds, target, preds, links))
        done.add(target)
    analysis = _model_for(ds, main.response, main.predictors, links)
    return SequenceSpec(tuple(models), analysis, bool(ord_cov_dummy), ref_level)


def list_models(seq: SequenceSpec) -> str:
    formulas = [str(m) for m in seq.models]
    width = max(len("model_formula"), *(len(f) for f in formulas))
    lines = [f"{'Order':<5}   {'model_formula':<{width}}"]
    for i, f in enumerate(formulas, start=1):
        lines.append(f"{i:^5}   {f:<{width}}")
    return "\n".join(lines) + "\n"


@dataclass
class DesignEncoder:
    """Column layout of one model's design matrix.

    Blocks are ``(name, kind, levels)``; ``kind`` is ``numeric`` (one
    column holding the value) or ``dummy`` (indicators for every level
    except the reference).
    """

    predictors: tuple
    blocks: list
    columns: list
    intercept: bool = True
    ref_level: int = 1
    treatment: str | None = None

    @classmethod
    def for_model(cls, spec: ModelSpec, ds: WideDataset, ord_cov_dummy: bool, ref_level: int = 1, intercept=True):
        blocks, cols = [], ["(Intercept)"] if intercept else []
        treatment = None
        for p in spec.predictors:
            meta = ds.var(p)
            if meta.role == "treatment":
                treatment = p
            if meta.kind == "categorical" or (meta.kind == "ordinal" and ord_cov_dummy):
                levels = [lv for lv in range(1, meta.levels + 1) if lv != ref_level]
                if ref_level not in range(1, meta.levels + 1):
                    raise FormulaError(f"{p}: reference level {ref_level} outside 1..{meta.levels}")
                blocks.append((p, "dummy", tuple(levels)))
                cols.extend(f"{p}[{lv}]" for lv in levels)
            else:
                blocks.append((p, "numeric", None))
                cols.append(p)
        return cls(spec.predictors, blocks, cols, intercept, ref_level, treatment)

    @property
    def width(self) -> int:
        return len(self.columns)

    def column_index(self, name: str):
        """Index of a numeric predictor's column (e.g. the treatment)."""
        try:
            return self.columns.index(name)
        except ValueError:
            return None

    def encode(self, values: np.ndarray, index: dict) -> np.ndarray:
        """Build the design from a (rows, variables) array with column map ``index``."""
        n = values.shape[0]
        out = np.empty((n, self.width))
        c = 0
        if self.intercept:
            out[:, 0] = 1.0
            c = 1
        for name, kind, levels in self.blocks:
            col = values[:, index[name]]
            if kind == "numeric":
                out[:, c] = col
                c += 1
            else:
                for lv in levels:
                    out[:, c] = col == lv
                    c += 1
        return out


def encode_design(ds: WideDataset, spec: ModelSpec, ord_cov_dummy: bool = False, rows=None, ref_level: int = 1):
    """Design matrix (intercept first) and response vector for ``spec``.

    Returns ``(X, y, column_names)``.  ``y`` keeps NaN for missing targets;
    missing predictor values in the selected rows are an error.
    """
    enc = DesignEncoder.for_model(spec, ds, ord_cov_dummy, ref_level)
    names = list(spec.predictors) + [spec.target]
    vals = ds.values(names)
    if rows is not None:
        vals = vals[np.asarray(rows)]
    index = {nm: i for i, nm in enumerate(names)}
    for name, kind, _ in enc.blocks:
        col = vals[:, index[name]]
        if np.isnan(col).any():
            raise DataError(f"predictor {name!r} has missing values in the selected rows")
        support = ds.var(name).support
        if support is not None and not np.isin(col, support).all():
            bad = col[~np.isin(col, support)][0]
            raise DataError(f"predictor {name!r}: unknown level {bad:g}")
    return enc.encode(vals, index), vals[:, -1], enc.columns

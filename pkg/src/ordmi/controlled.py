"""Controlled multiple imputation from retained MAR draws.

Every imputer starts from a retained draw's completed matrix and redraws
the trailing cells of each subject (missing cells with nothing observed
later in the sequence order) forward from the sequential models at the
draw's parameters.  Non-trailing cells keep their MAR augmentation since
they are conditioned on later observed values.  Pattern-mixture methods
change the linear predictor of treated subjects at visits after their
dropout visit only:

* ``DELTA`` adds delta to the treatment coefficient;
* ``CR`` removes the treatment term;
* ``J2R`` subtracts the marginal treatment effect at that visit,
  estimated by forward Monte Carlo of both arms.

All methods consume the same uniforms for the same cells, so control-arm
subjects and completers are bit-identical across methods at a given seed.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import ndtri

from .data import WideDataset, format_cell, missing_pattern
from .errors import ConfigError, InsufficientDrawsError, NumericalError

__all__ = [
    "MIMethod",
    "MISet",
    "select_draws",
    "impute_mar",
    "impute_delta",
    "impute_cr",
    "impute_j2r",
    "marginal_effects",
    "extract_MIdata",
    "read_stacked_csv",
]

METHODS = ("MAR", "DELTA", "CR", "J2R")
DEFAULT_MC_SIZE = 10_000


@dataclass(frozen=True)
class MIMethod:
    """Imputation assumption.  ``delta`` is on the log-odds scale.

    ``delta`` may also be a mapping from outcome name to a per-visit value.
    """

    tag: str = "MAR"
    delta: object = None

    def __post_init__(self):
        tag = self.tag.upper()
        if tag not in METHODS:
            raise ConfigError(f"unknown imputation method {self.tag!r}; choose from {METHODS}")
        object.__setattr__(self, "tag", tag)
        if tag == "DELTA":
            if self.delta is None:
                raise ConfigError("method DELTA requires a delta value")
            vals = self.delta.values() if isinstance(self.delta, dict) else [self.delta]
            if not all(math.isfinite(float(v)) for v in vals):
                raise ConfigError("delta must be finite")

    @classmethod
    def parse(cls, name: str, delta=None) -> "MIMethod":
        return cls(name, delta if name.upper() == "DELTA" else None)

    def delta_for(self, outcome: str) -> float:
        if isinstance(self.delta, dict):
            return float(self.delta.get(outcome, 0.0))
        return float(self.delta)

    def __str__(self):
        return f"DELTA({self.delta})" if self.tag == "DELTA" else self.tag


@dataclass
class MISet:
    """M completed datasets with per-dataset provenance."""

    datasets: list
    provenance: list
    method: MIMethod
    analysis: object = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.datasets)

    @property
    def M(self) -> int:
        return len(self.datasets)

    def stacked(self) -> pd.DataFrame:
        frames = []
        for m, ds in enumerate(self.datasets, start=1):
            f = ds.frame.copy()
            id_name = ds.id_name
            f.insert(0, ".id", f.pop(id_name))
            f.insert(0, ".imp", m)
            frames.append(f)
        return pd.concat(frames, ignore_index=True)

    def to_csv(self, path) -> None:
        """Write the stacked ``.imp``/``.id`` CSV plus a JSON provenance sidecar."""
        path = Path(path)
        ds0 = self.datasets[0]
        metas = [m for m in ds0.meta if m.role != "id"]
        lines = [",".join([".imp", ".id", *(m.name for m in metas)])]
        for i, ds in enumerate(self.datasets, start=1):
            cols = [ds.frame[m.name].to_numpy() for m in metas]
            for rid, *vals in zip(ds.ids, *cols):
                lines.append(",".join([str(i), str(rid), *(format_cell(v, m) for v, m in zip(vals, metas))]))
        path.write_text("\n".join(lines) + "\n")
        sidecar = {
            "format": "ordmi-miset",
            "version": 1,
            "method": self.method.tag,
            "delta": self.method.delta,
            "M": self.M,
            "schema": [vars(m) for m in ds0.meta],
            "analysis": str(self.analysis) if self.analysis is not None else None,
            "provenance": self.provenance,
            **self.meta,
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_stacked_csv(path) -> MISet:
    """Read a stacked CSV written by :meth:`MISet.to_csv`."""
    from .data import VariableMeta

    path = Path(path)
    side = json.loads(path.with_suffix(".json").read_text())
    meta = [VariableMeta(**m) for m in side["schema"]]
    id_name = next(m.name for m in meta if m.role == "id")
    frame = pd.read_csv(path, dtype={".id": str}, keep_default_na=True)
    datasets = []
    for _, part in frame.groupby(".imp", sort=True):
        f = part.drop(columns=".imp").rename(columns={".id": id_name})
        datasets.append(WideDataset(f, meta))
    method = MIMethod(side["method"], side.get("delta"))
    return MISet(datasets, side["provenance"], method)


def select_draws(store, M: int, minspace: int) -> list:
    """Indices of M evenly strided draws in the chain-concatenated sequence.

    The stride is ``floor(total / M)`` and must be at least ``minspace``;
    draws are taken at positions stride, 2*stride, ..., M*stride (1-based),
    so ``M = 1`` selects the last retained draw.
    """
    if M < 1 or minspace < 1:
        raise ConfigError("M and minspace must be >= 1")
    total = store.total_retained
    need = M * minspace
    if total < need:
        raise InsufficientDrawsError(
            f"M={M} with minspace={minspace} requires {need} retained draws, only {total} available"
        )
    stride = total // M
    return [k * stride - 1 for k in range(1, M + 1)]


def _post_dropout_mask(model, ds: WideDataset) -> np.ndarray:
    """(n, T) cells of treated subjects at outcome visits after dropout."""
    mp = missing_pattern(ds)
    treated = ds.treatment == 1
    mask = np.zeros((model.n, len(model.nodes)), dtype=bool)
    outcomes = ds.outcome_names
    for nd in model.nodes:
        if nd.target in outcomes:
            mask[:, nd.pos] = treated & (outcomes.index(nd.target) > mp.dropout)
    return mask


def _link_scale(p, link):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    if link == "logit":
        return np.log(p / (1 - p))
    if link == "probit":
        return ndtri(p)
    if link == "cloglog":
        return np.log(-np.log1p(-p))
    return np.log(p)


def marginal_effects(model, state: dict, mc_size: int, rng) -> dict:
    """Marginal treatment effect at every outcome model of the sequence.

    Both arms are simulated forward ``mc_size`` times over resampled
    complete covariates using common random numbers; each effect is the
    proportional-odds (or link-scale binomial) contrast between the arms'
    simulated marginal distributions.
    """
    from .analysis import fit_cumulative_logit

    if mc_size < 1000:
        warnings.warn(f"J2R mc_size={mc_size} < 1000: Monte Carlo noise may dominate", stacklevel=2)
    ds = model.ds
    tx = model.index[model.treatment] if model.treatment in model.index else None
    targets = set(model.targets)
    fixed = [i for nm, i in model.index.items() if nm not in targets and nm != model.treatment]
    pick = rng.integers(0, model.n, mc_size)
    seed = rng.integers(0, 2**63 - 1)
    sims = {}
    for arm in (1.0, 0.0):
        sim = np.full((mc_size, len(model.names)), np.nan)
        sim[:, fixed] = model.values[pick][:, fixed]
        if tx is not None:
            sim[:, tx] = arm
        mask = np.ones((mc_size, len(model.nodes)), dtype=bool)
        model.forward_fill(sim, mask, state, np.random.default_rng(seed))
        sims[arm] = sim
    out = {}
    for nd in model.nodes:
        if ds.var(nd.target).role != "outcome":
            continue
        y1, y0 = sims[1.0][:, nd.tidx], sims[0.0][:, nd.tidx]
        if nd.kind == "lm":
            out[nd.target] = float(y1.mean() - y0.mean())
            continue
        if nd.kind == "glm_binomial":
            out[nd.target] = float(_link_scale(y1.mean(), nd.link) - _link_scale(y0.mean(), nd.link))
            continue
        K = nd.K
        c1 = np.array([(y1 == k).sum() for k in range(1, K + 1)], dtype=float)
        c0 = np.array([(y0 == k).sum() for k in range(1, K + 1)], dtype=float)
        keep = (c1 + c0) > 0
        if np.array_equal(c1, c0):
            out[nd.target] = 0.0
            continue
        levels = np.flatnonzero(keep) + 1
        y = np.tile(np.arange(1, len(levels) + 1), 2)
        x = np.repeat([1.0, 0.0], len(levels))[:, None]
        w = np.concatenate([c1[keep], c0[keep]])
        fit = fit_cumulative_logit(x, y, len(levels), weights=w, names=["arm"])
        if not fit.converged:
            raise NumericalError(f"J2R marginal contrast for {nd.target} did not converge")
        out[nd.target] = fit.estimate("arm")
    return out


def _impute(store, draw_index: int, method: MIMethod, rng, mc_size: int = DEFAULT_MC_SIZE) -> WideDataset:
    model = store.model
    ds = store.dataset
    d = store.draw(draw_index)
    state = model.state_from_vector(d.params)
    values = model.values.copy()
    values[:, model.tidx] = d.completed
    offsets = None
    if method.tag != "MAR":
        post = _post_dropout_mask(model, ds) & model.trailing
        offsets = np.zeros(post.shape)
        if method.tag == "J2R":
            try:
                effects = marginal_effects(model, state, mc_size, rng.spawn(1)[0])
            except NumericalError as exc:
                raise NumericalError(f"draw {draw_index} (chain {d.chain}, iteration {d.iteration}): {exc}") from exc
        for nd in model.nodes:
            rows = post[:, nd.pos]
            if not rows.any():
                continue
            if method.tag == "DELTA":
                offsets[rows, nd.pos] = method.delta_for(nd.target)
            elif method.tag == "CR":
                offsets[rows, nd.pos] = -state[nd.target].treatment_coef(model.treatment)
            else:
                offsets[rows, nd.pos] = -effects[nd.target]
    model.forward_fill(values, model.trailing, state, rng, offsets)
    updates = {nm: values[:, model.index[nm]] for nm in model.targets}
    return ds.with_values(updates)


def impute_mar(store, draw_index: int, rng) -> WideDataset:
    return _impute(store, draw_index, MIMethod("MAR"), rng)


def impute_delta(store, draw_index: int, delta, rng) -> WideDataset:
    return _impute(store, draw_index, MIMethod("DELTA", delta), rng)


def impute_cr(store, draw_index: int, rng) -> WideDataset:
    return _impute(store, draw_index, MIMethod("CR"), rng)


def impute_j2r(store, draw_index: int, rng, mc_size: int = DEFAULT_MC_SIZE) -> WideDataset:
    return _impute(store, draw_index, MIMethod("J2R"), rng, mc_size)


def draw_rng(seed: int, draw_index: int) -> np.random.Generator:
    """Private stream for one selected draw."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(draw_index,)))


def extract_MIdata(store, method="MAR", M: int = 100, minspace: int = 5, mi_setting: dict | None = None,
                   delta=None, mc_size: int | None = None) -> MISet:
    """Select M draws and complete the data under ``method`` at each.

    ``method`` is an :class:`MIMethod` or its tag.  ``mi_setting`` may
    override ``seed`` (default: the sampler seed) and ``mc_size``.
    """
    if isinstance(method, str):
        method = MIMethod.parse(method, delta)
    if store.total_retained == 0:
        raise InsufficientDrawsError("the draw store holds no retained draws")
    settings = dict(mi_setting or {})
    seed = int(settings.pop("seed", store.seed))
    mc = int(settings.pop("mc_size", mc_size or DEFAULT_MC_SIZE))
    if settings:
        raise ConfigError(f"unknown mi_setting keys: {sorted(settings)}")
    picks = select_draws(store, M, minspace)
    datasets, prov = [], []
    for g in picks:
        d = store.draw(g)
        datasets.append(_impute(store, g, method, draw_rng(seed, g), mc))
        prov.append({
            "draw": g,
            "chain": d.chain + 1,
            "iteration": d.iteration,
            "method": method.tag,
            "delta": method.delta if method.tag == "DELTA" else None,
            "seed": seed,
        })
    return MISet(datasets, prov, method, store.sequence.analysis_model,
                 {"algorithm": store.algorithm, "spec_hash": store.spec_hash})

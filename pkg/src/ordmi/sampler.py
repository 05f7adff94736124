"""MCMC for the sequential imputation model with data augmentation.

Two backends share one compiled model (:class:`SequenceModel`):

``gibbs_da``
    Every missing cell is augmented at every sweep.  Parameters of each
    model are updated on all rows; then cells followed (in sequence order)
    by an observed value are redrawn from their full conditional and the
    trailing block of each subject is redrawn forward from the sequence.

``mda``
    Monotone data augmentation.  Only non-trailing ("intermittent") cells
    are augmented during sampling; each model's parameters are updated on
    the rows where its target is observed or intermittent-filled, which is
    the exact likelihood of the monotonised data because trailing cells
    integrate out of the factorisation.  Trailing cells are drawn forward
    only at retained iterations.

Parameters are sampled one component at a time by random-walk Metropolis
in the unconstrained space ``(c_1, d_2, ..., d_{K-1}, beta)``.  Design
columns are centred internally (a unit-Jacobian shear of intercepts and
cut-points); priors are always evaluated on the original parameters, so
the target posterior is unchanged while mixing improves.  Gaussian models
use conjugate normal / inverse-gamma Gibbs draws.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import WideDataset
from .errors import ConfigError, DataError
from .likelihood import (
    binomial_logpmf,
    binomial_mean,
    category_probs,
    draw_binary,
    draw_normal,
    draw_ordinal,
    from_unconstrained,
    ordinal_logpmf,
    to_unconstrained,
)
from .models import DesignEncoder, SequenceSpec

__all__ = [
    "PriorSpec",
    "ChainConfig",
    "ModelParams",
    "SequenceModel",
    "DrawStore",
    "Draw",
    "linear_predictor",
    "update_params",
    "impute_missing_mar",
    "run_gibbs_da",
    "run_mda",
    "run_sampler",
]

ALGORITHMS = ("gibbs_da", "mda")
TARGET_ACCEPT = 0.44
ADAPT_DECAY = 0.6


@dataclass(frozen=True)
class PriorSpec:
    coef_mean: float = 0.0
    coef_var: float = 100.0
    cut_mean: float = 0.0
    cut_var: float = 100.0
    ig_shape: float = 0.01
    ig_rate: float = 0.01

    def __post_init__(self):
        for name in ("coef_var", "cut_var", "ig_shape", "ig_rate"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"prior {name} must be positive")


@dataclass(frozen=True)
class ChainConfig:
    """MCMC settings.

    ``n_adapt`` sweeps tune the proposal scales and are discarded; then
    every ``thin``-th of ``n_iter`` sweeps is retained.  ``inits`` is
    ``"random"`` or a list with one parameter state (target -> ModelParams)
    per chain.
    """

    n_chains: int = 2
    n_iter: int = 1000
    n_adapt: int = 1000
    thin: int = 1
    seed: int = 1
    inits: object = "random"
    threads: int = 1

    def __post_init__(self):
        if self.n_chains < 1:
            raise ConfigError("n_chains must be >= 1")
        if self.n_iter < 0 or self.n_adapt < 0:
            raise ConfigError("n_iter and n_adapt must be >= 0")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.inits != "random":
            if len(self.inits) != self.n_chains:
                raise ConfigError("user-supplied inits need one state per chain")

    @property
    def n_retained(self) -> int:
        return self.n_iter // self.thin


@dataclass
class ModelParams:
    """Natural-scale parameters of one model.

    ``coef`` includes the intercept for binomial and gaussian models;
    ordinal models carry ``cut`` instead.
    """

    target: str
    kind: str
    coef: np.ndarray
    coef_names: tuple
    cut: np.ndarray | None = None
    sigma2: float | None = None

    def treatment_coef(self, name: str) -> float:
        try:
            return float(self.coef[self.coef_names.index(name)])
        except ValueError:
            return 0.0


def linear_predictor(params: ModelParams, x, k: int | None = None):
    """``c_k + x'beta`` for ordinal models (``x'beta`` when k is None).

    ``x`` is a design row or matrix in the model's column layout.
    """
    eta = np.asarray(x, dtype=float) @ params.coef
    if k is not None:
        if params.cut is None:
            raise ValueError("k only applies to cumulative-logit models")
        return params.cut[k - 1] + eta
    return eta


@dataclass
class _Node:
    pos: int
    spec: object
    kind: str
    target: str
    tidx: int
    enc: DesignEncoder
    link: str
    K: int
    support: np.ndarray | None
    users: list = field(default_factory=list)

    @property
    def n_cut(self) -> int:
        return self.K - 1 if self.kind == "cumulative_logit" else 0

    @property
    def n_theta(self) -> int:
        return self.n_cut + self.enc.width

    def loglik_terms(self, params: ModelParams, X, y):
        eta = X @ params.coef
        if self.kind == "cumulative_logit":
            return ordinal_logpmf(params.cut, eta, y)
        if self.kind == "glm_binomial":
            return binomial_logpmf(eta, y, self.link)
        r = y - eta
        return -0.5 * (np.log(2 * np.pi * params.sigma2) + r * r / params.sigma2)


class SequenceModel:
    """A :class:`SequenceSpec` compiled against a dataset.

    Attributes
    ----------
    names : list of str
        Every variable referenced by the sequence; columns of ``values``.
    nodes : list
        One entry per model in sampling order.
    missing, trailing, intermittent : ndarray of bool, shape (n, T)
        Per subject and model position.  Trailing cells are missing cells
        with no observed value later in the sequence order.
    """

    def __init__(self, seq: SequenceSpec, ds: WideDataset):
        self.seq = seq
        self.ds = ds
        names = []
        for m in seq.models:
            for nm in (*m.predictors, m.target):
                if nm not in names:
                    names.append(nm)
        self.names = names
        self.index = {nm: i for i, nm in enumerate(names)}
        self.values = ds.values(names)
        self.treatment = ds.treatment_name
        self.nodes = []
        for pos, spec in enumerate(seq.models):
            meta = ds.var(spec.target)
            col = self.values[:, self.index[spec.target]]
            if np.isnan(col).all():
                raise DataError(f"column {spec.target!r} is entirely missing and cannot inform any model")
            ordinal = spec.model_kind == "cumulative_logit"
            enc = DesignEncoder.for_model(spec, ds, seq.ord_cov_dummy, seq.ref_level, intercept=not ordinal)
            K = meta.n_levels if meta.kind != "continuous" else 0
            self.nodes.append(
                _Node(pos, spec, spec.model_kind, spec.target, self.index[spec.target], enc, spec.link, K, meta.support)
            )
        for node in self.nodes:
            node.users = [u.pos for u in self.nodes[node.pos + 1:] if node.target in u.spec.predictors]
        T = len(self.nodes)
        self.tidx = np.array([nd.tidx for nd in self.nodes], dtype=int)
        self.missing = np.isnan(self.values[:, self.tidx])
        observed = ~self.missing
        last = np.where(observed.any(axis=1), T - 1 - np.argmax(observed[:, ::-1], axis=1), -1)
        self.trailing = np.arange(T)[None, :] > last[:, None]
        self.intermittent = self.missing & ~self.trailing
        self.param_names = []
        self.slices = []
        start = 0
        for nd in self.nodes:
            pn = [f"{nd.target}:c{k}" for k in range(1, nd.n_cut + 1)]
            pn += [f"{nd.target}:{c}" for c in nd.enc.columns]
            if nd.kind == "lm":
                pn.append(f"{nd.target}:sigma2")
            self.param_names.extend(pn)
            self.slices.append(slice(start, start + len(pn)))
            start += len(pn)

    @property
    def targets(self) -> list:
        return [nd.target for nd in self.nodes]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def spec_hash(self) -> str:
        h = hashlib.sha256()
        h.update("\n".join(str(m) for m in self.seq.models).encode())
        h.update(f"{self.seq.ord_cov_dummy}:{self.seq.ref_level}".encode())
        h.update(np.ascontiguousarray(np.nan_to_num(self.values, nan=-999.0)).tobytes())
        return h.hexdigest()[:16]

    # -- parameter vectors ---------------------------------------------
    def to_vector(self, state: dict) -> np.ndarray:
        out = np.empty(len(self.param_names))
        for nd, sl in zip(self.nodes, self.slices):
            p = state[nd.target]
            parts = []
            if nd.n_cut:
                parts.append(p.cut)
            parts.append(p.coef)
            if nd.kind == "lm":
                parts.append([p.sigma2])
            out[sl] = np.concatenate(parts)
        return out

    def state_from_vector(self, vec) -> dict:
        state = {}
        for nd, sl in zip(self.nodes, self.slices):
            v = np.asarray(vec[sl], dtype=float)
            cut = v[: nd.n_cut].copy() if nd.n_cut else None
            coef = v[nd.n_cut: nd.n_cut + nd.enc.width].copy()
            s2 = float(v[-1]) if nd.kind == "lm" else None
            state[nd.target] = ModelParams(nd.target, nd.kind, coef, tuple(nd.enc.columns), cut, s2)
        return state

    # -- conditional draws ---------------------------------------------
    def design(self, node, values, rows=None):
        sub = values if rows is None else values[rows]
        return node.enc.encode(sub, self.index)

    def forward_fill(self, values, mask, state, rng, offsets=None):
        """Redraw cells flagged in ``mask`` (n, T) forward in sequence order.

        One uniform is consumed per flagged cell whatever ``offsets`` holds,
        so runs differing only in offsets share their randomness.
        ``offsets`` (n, T) is added to the linear predictor.
        """
        for nd in self.nodes:
            rows = np.flatnonzero(mask[:, nd.pos])
            u = rng.random(rows.size)
            if rows.size == 0:
                continue
            p = state[nd.target]
            eta = self.design(nd, values, rows) @ p.coef
            if offsets is not None:
                eta = eta + offsets[rows, nd.pos]
            if nd.kind == "cumulative_logit":
                values[rows, nd.tidx] = draw_ordinal(p.cut, eta, u)
            elif nd.kind == "glm_binomial":
                values[rows, nd.tidx] = draw_binary(eta, u, nd.link)
            else:
                values[rows, nd.tidx] = draw_normal(eta, np.sqrt(p.sigma2), u)
        return values

    def _later_loglik(self, node, state, sub, rows_ok=None):
        """Sum of later models' log-likelihood terms per row of ``sub``."""
        total = np.zeros(sub.shape[0])
        for t in node.users:
            un = self.nodes[t]
            yt = sub[:, un.tidx]
            ok = ~np.isnan(yt)
            if not ok.any():
                continue
            X = self.design(un, sub[ok])
            total[ok] += un.loglik_terms(state[un.target], X, yt[ok])
        return total

    def gibbs_intermittent(self, values, state, rng):
        """Redraw every intermittent cell from its full conditional.

        Discrete targets are enumerated over their support; gaussian targets
        take an independence-Metropolis step proposing from their own model.
        """
        for nd in self.nodes:
            rows = np.flatnonzero(self.intermittent[:, nd.pos])
            if rows.size == 0:
                continue
            p = state[nd.target]
            sub = values[rows].copy()
            eta = self.design(nd, sub) @ p.coef
            if nd.kind == "lm":
                cur = sub[:, nd.tidx].copy()
                lc = self._later_loglik(nd, state, sub)
                sub[:, nd.tidx] = eta + np.sqrt(p.sigma2) * rng.standard_normal(rows.size)
                lp = self._later_loglik(nd, state, sub)
                keep = np.log(rng.random(rows.size)) >= lp - lc
                sub[keep, nd.tidx] = cur[keep]
                values[rows, nd.tidx] = sub[:, nd.tidx]
                continue
            if nd.kind == "cumulative_logit":
                with np.errstate(divide="ignore"):
                    logp = np.log(category_probs(p.cut, eta))
            else:
                mu = binomial_mean(eta, nd.link)
                with np.errstate(divide="ignore", invalid="ignore"):
                    logp = np.column_stack([np.log1p(-mu), np.log(mu)])
            for s, v in enumerate(nd.support):
                sub[:, nd.tidx] = v
                logp[:, s] += self._later_loglik(nd, state, sub)
            logp -= logp.max(axis=1, keepdims=True)
            prob = np.exp(logp)
            cum = np.cumsum(prob, axis=1)
            u = rng.random(rows.size) * cum[:, -1]
            pick = (u[:, None] > cum[:, :-1]).sum(axis=1)
            values[rows, nd.tidx] = nd.support[pick]
        return values


# ---------------------------------------------------------------------------
# parameter updates


class _NodeSampler:
    """Unconstrained state and adaptive proposal scales for one model."""

    def __init__(self, node: _Node, priors: PriorSpec, theta, sigma2, xbar, scales):
        self.node = node
        self.priors = priors
        self.theta = np.asarray(theta, dtype=float)
        self.sigma2 = sigma2
        self.xbar = xbar
        self.scales = scales
        self.accepted = np.zeros(node.n_theta)
        self.proposed = 0
        self.nonfinite = 0
        nc = node.n_cut
        offset = 1 if node.kind != "cumulative_logit" else 0
        # index in theta of the slopes shifted by centring
        self._slopes = np.arange(nc + offset, node.n_theta)
        self._xbar_full = np.zeros(node.n_theta)
        self._xbar_full[self._slopes] = xbar

    # centred theta <-> natural parameters
    def params(self) -> ModelParams:
        nd = self.node
        th = self.theta
        shift = float(self._xbar_full @ th)
        if nd.kind == "cumulative_logit":
            v = th[: nd.n_cut].copy()
            v[0] -= shift
            cut = from_unconstrained(v)
            coef = th[nd.n_cut:].copy()
            return ModelParams(nd.target, nd.kind, coef, tuple(nd.enc.columns), cut, None)
        coef = th.copy()
        coef[0] -= shift
        return ModelParams(nd.target, nd.kind, coef, tuple(nd.enc.columns), None, self.sigma2)

    @classmethod
    def from_params(cls, node, priors, params: ModelParams, xbar, scales):
        if node.kind == "cumulative_logit":
            v = to_unconstrained(params.cut)
            v[0] += float(xbar @ params.coef)
            theta = np.concatenate([v, params.coef])
        else:
            theta = np.asarray(params.coef, dtype=float).copy()
            if node.kind != "lm":
                theta[0] += float(xbar @ params.coef[1:])
        return cls(node, priors, theta, params.sigma2, xbar, scales)

    def _log_prior(self, th) -> float:
        pr = self.priors
        nd = self.node
        shift = float(self._xbar_full @ th)
        if nd.kind == "cumulative_logit":
            u = th[: nd.n_cut].copy()
            u[0] -= shift
            b = th[nd.n_cut:]
            lp = -0.5 * np.sum((u - pr.cut_mean) ** 2) / pr.cut_var
        else:
            b = th.copy()
            b[0] -= shift
            lp = 0.0
        return lp - 0.5 * np.sum((b - pr.coef_mean) ** 2) / pr.coef_var

    def _loglik(self, th, Xc, y) -> float:
        nd = self.node
        if nd.kind == "cumulative_logit":
            cut = from_unconstrained(th[: nd.n_cut])
            return float(ordinal_logpmf(cut, Xc @ th[nd.n_cut:], y).sum())
        return float(binomial_logpmf(Xc @ th, y, nd.link).sum())

    def centred(self, X):
        if self.node.kind == "cumulative_logit":
            return X - self.xbar
        Xc = X.copy()
        Xc[:, 1:] -= self.xbar
        return Xc

    def sweep(self, X, y, rng, adapt_t=None):
        if self.node.kind == "lm":
            self._gibbs_gaussian(X, y, rng)
            return
        nd = self.node
        Xc = self.centred(X)
        if nd.kind == "cumulative_logit":
            y = y.astype(np.intp)
        th = self.theta
        q = th.size
        nc = nd.n_cut
        z = rng.standard_normal(q)
        logu = np.log(rng.random(q))
        acc = np.zeros(q)
        if nd.kind == "cumulative_logit":
            cut = from_unconstrained(th[:nc])
            eta = Xc @ th[nc:]
            ll = float(ordinal_logpmf(cut, eta, y).sum())
        else:
            eta = Xc @ th
            ll = float(binomial_logpmf(eta, y, nd.link).sum())
        lprior = self._log_prior(th)
        for i in range(q):
            old = th[i]
            new = old + self.scales[i] * z[i]
            th[i] = new
            if i < nc:
                cut_new = from_unconstrained(th[:nc])
                eta_new = eta
                ll_new = float(ordinal_logpmf(cut_new, eta_new, y).sum())
            else:
                col = i - nc
                eta_new = eta + (new - old) * Xc[:, col]
                if nd.kind == "cumulative_logit":
                    cut_new = cut
                    ll_new = float(ordinal_logpmf(cut, eta_new, y).sum())
                else:
                    ll_new = float(binomial_logpmf(eta_new, y, nd.link).sum())
            lprior_new = self._log_prior(th)
            ratio = ll_new + lprior_new - ll - lprior
            if not np.isfinite(ratio):
                self.nonfinite += 1
                th[i] = old
                continue
            if logu[i] < ratio:
                acc[i] = 1.0
                ll, lprior, eta = ll_new, lprior_new, eta_new
                if i < nc:
                    cut = cut_new
            else:
                th[i] = old
        self.accepted += acc
        self.proposed += 1
        if adapt_t is not None:
            self.scales *= np.exp(adapt_t ** -ADAPT_DECAY * (acc - TARGET_ACCEPT))

    def _gibbs_gaussian(self, X, y, rng):
        pr = self.priors
        p = X.shape[1]
        prec = X.T @ X / self.sigma2 + np.eye(p) / pr.coef_var
        rhs = X.T @ y / self.sigma2 + pr.coef_mean / pr.coef_var
        L = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, rhs)
        beta = mean + np.linalg.solve(L.T, rng.standard_normal(p))
        resid = y - X @ beta
        shape = pr.ig_shape + 0.5 * y.size
        rate = pr.ig_rate + 0.5 * float(resid @ resid)
        self.theta = beta
        self.sigma2 = rate / rng.gamma(shape)
        self.proposed += 1


def _initial_params(node, y_obs, X, rng, jitter: bool) -> ModelParams:
    cols = tuple(node.enc.columns)
    if node.kind == "cumulative_logit":
        counts = np.array([(y_obs == k).sum() for k in range(1, node.K + 1)], dtype=float) + 0.5
        cum = np.cumsum(counts)[:-1] / counts.sum()
        v = to_unconstrained(np.log(cum / (1 - cum)))
        if jitter:
            v = v + rng.normal(0.0, 0.1, v.size)
        return ModelParams(node.target, node.kind, np.zeros(node.enc.width), cols, from_unconstrained(v))
    coef = np.zeros(node.enc.width)
    if node.kind == "glm_binomial":
        m = (y_obs.sum() + 0.5) / (y_obs.size + 1.0)
        coef[0] = {"logit": np.log(m / (1 - m)), "log": np.log(m)}.get(node.link, 0.0)
        if jitter:
            coef[0] += rng.normal(0.0, 0.1)
        return ModelParams(node.target, node.kind, coef, cols)
    coef[0] = y_obs.mean()
    s2 = float(y_obs.var()) if y_obs.size > 1 and y_obs.var() > 0 else 1.0
    return ModelParams(node.target, node.kind, coef, cols, None, s2)


def _initial_scales(node, X):
    n = max(X.shape[0], 1)
    slopes = X if node.kind == "cumulative_logit" else X[:, 1:]
    sd = slopes.std(axis=0) if slopes.shape[1] else np.zeros(0)
    base = 2.4 * 2.0 / np.sqrt(n)
    coef_scale = base / np.maximum(sd, 0.05)
    head = np.full(node.n_cut if node.kind == "cumulative_logit" else 1, base)
    return np.clip(np.concatenate([head, coef_scale]), 1e-3, 2.0)


def update_params(state: dict, model: SequenceModel, values, rng, priors: PriorSpec = PriorSpec(), adapt_t=None):
    """One Metropolis-within-Gibbs sweep over every model on complete ``values``.

    Returns the new parameter state; proposal scales default to the
    heuristic initial scales (no adaptation carried between calls).
    """
    new = {}
    for nd in model.nodes:
        X = model.design(nd, values)
        y = values[:, nd.tidx]
        slopes = X if nd.kind == "cumulative_logit" else X[:, 1:]
        xbar = slopes.mean(axis=0) if nd.kind != "lm" else np.zeros(slopes.shape[1])
        ns = _NodeSampler.from_params(nd, priors, state[nd.target], xbar, _initial_scales(nd, X))
        ns.sweep(X, y, rng, adapt_t)
        new[nd.target] = ns.params()
    return new


def impute_missing_mar(state: dict, model: SequenceModel, rng, current=None):
    """Augment every missing cell under MAR at the given parameters.

    Trailing cells are drawn forward from the sequence.  Intermittent cells
    are drawn from their full conditional given ``current`` fills of the
    other cells; without ``current`` they are first initialised forward.
    Returns a completed (n, variables) array in ``model.names`` order.
    """
    values = model.values.copy() if current is None else np.array(current, dtype=float)
    if current is None:
        model.forward_fill(values, model.missing, state, rng)
    model.gibbs_intermittent(values, state, rng)
    model.forward_fill(values, model.trailing, state, rng)
    return values


# ---------------------------------------------------------------------------
# chains and the draw store


@dataclass
class Draw:
    """One retained iteration: parameters plus the completed target matrix."""

    chain: int
    index: int
    iteration: int
    params: np.ndarray
    completed: np.ndarray
    global_index: int = 0


@dataclass
class DrawStore:
    """Retained MCMC output of every chain.

    ``params[c]`` is (retained, n_params) in the natural parameterisation;
    ``completed[c]`` is (retained, n_subjects, n_targets) with every cell
    of the sequence targets filled.
    """

    param_names: list
    targets: list
    params: list
    completed: list
    iterations: list
    sequence: SequenceSpec
    dataset: WideDataset
    config: ChainConfig
    priors: PriorSpec
    algorithm: str
    spec_hash: str = ""
    acceptance: list = field(default_factory=list)
    nonfinite: list = field(default_factory=list)
    _model: SequenceModel | None = field(default=None, repr=False, compare=False)

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def n_chains(self) -> int:
        return len(self.params)

    def n_retained(self, chain: int = 0) -> int:
        return self.params[chain].shape[0]

    @property
    def total_retained(self) -> int:
        return sum(p.shape[0] for p in self.params)

    @property
    def model(self) -> SequenceModel:
        if self._model is None:
            self._model = SequenceModel(self.sequence, self.dataset)
        return self._model

    def draw(self, global_index: int) -> Draw:
        """Retained draw by position in the chain-concatenated sequence."""
        if not 0 <= global_index < self.total_retained:
            raise IndexError(f"draw {global_index} outside 0..{self.total_retained - 1}")
        g = global_index
        for c, p in enumerate(self.params):
            if g < p.shape[0]:
                return Draw(c, g, int(self.iterations[c][g]), p[g], self.completed[c][g], global_index)
            g -= p.shape[0]
        raise AssertionError("unreachable")

    def state(self, global_index: int) -> dict:
        return self.model.state_from_vector(self.draw(global_index).params)

    def param_series(self, name: str) -> np.ndarray:
        """Array (n_chains, n_retained) of one named parameter."""
        j = self.param_names.index(name)
        return np.stack([p[:, j] for p in self.params])

    def treatment_params(self) -> list:
        tx = self.dataset.treatment_name
        return [nm for nm in self.param_names if nm.split(":", 1)[1] == tx]

    def equals(self, other: "DrawStore") -> bool:
        if self.param_names != other.param_names or self.algorithm != other.algorithm:
            return False
        pairs = zip(self.params + self.completed, other.params + other.completed)
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in pairs)


def _run_chain(model: SequenceModel, priors, config: ChainConfig, algorithm, chain, seedseq):
    rng = np.random.default_rng(seedseq)
    values = model.values.copy()
    init_state = None if config.inits == "random" else config.inits[chain]

    samplers = []
    state = {}
    for nd in model.nodes:
        obs_rows = ~model.missing[:, nd.pos]
        y_obs = values[obs_rows, nd.tidx]
        if init_state is not None:
            p0 = init_state[nd.target]
        else:
            p0 = _initial_params(nd, y_obs, None, rng, jitter=True)
        state[nd.target] = p0
    fill = model.missing if algorithm == "gibbs_da" else model.intermittent
    model.forward_fill(values, fill, state, rng)
    for nd in model.nodes:
        rows = np.flatnonzero(~model.trailing[:, nd.pos]) if algorithm == "mda" else slice(None)
        X = model.design(nd, values, rows)
        slopes = X if nd.kind == "cumulative_logit" else X[:, 1:]
        xbar = slopes.mean(axis=0) if nd.kind != "lm" else np.zeros(slopes.shape[1])
        samplers.append(_NodeSampler.from_params(nd, priors, state[nd.target], xbar, _initial_scales(nd, X)))

    def current_state():
        return {s.node.target: s.params() for s in samplers}

    def update_all(adapt_t):
        for s in samplers:
            nd = s.node
            if algorithm == "mda":
                rows = np.flatnonzero(~model.trailing[:, nd.pos])
                X = model.design(nd, values, rows)
                y = values[rows, nd.tidx]
            else:
                X = model.design(nd, values)
                y = values[:, nd.tidx]
            s.sweep(X, y, rng, adapt_t)

    n_ret = config.n_retained
    out_params = np.empty((n_ret, len(model.param_names)))
    out_completed = np.empty((n_ret, model.n, len(model.nodes)))
    out_iter = np.empty(n_ret, dtype=np.int64)
    r = 0
    total = config.n_adapt + config.n_iter
    for it in range(total):
        adapt_t = it + 1 if it < config.n_adapt else None
        if algorithm == "mda":
            model.gibbs_intermittent(values, current_state(), rng)
            update_all(adapt_t)
        else:
            update_all(adapt_t)
            st = current_state()
            model.gibbs_intermittent(values, st, rng)
            model.forward_fill(values, model.trailing, st, rng)
        post = it - config.n_adapt + 1
        if post > 0 and post % config.thin == 0:
            st = current_state()
            if algorithm == "mda":
                full = values.copy()
                model.forward_fill(full, model.trailing, st, rng)
            else:
                full = values
            out_params[r] = model.to_vector(st)
            out_completed[r] = full[:, model.tidx]
            out_iter[r] = post
            r += 1
    acc = {}
    for s in samplers:
        names = model.param_names[model.slices[s.node.pos]]
        if s.node.kind == "lm":
            continue
        rates = s.accepted / max(s.proposed, 1)
        acc.update(dict(zip(names, rates)))
    nonfinite = sum(s.nonfinite for s in samplers)
    return out_params, out_completed, out_iter, acc, nonfinite


def run_sampler(seq: SequenceSpec, ds: WideDataset, priors: PriorSpec = PriorSpec(),
                config: ChainConfig = ChainConfig(), algorithm: str = "gibbs_da") -> DrawStore:
    """Run every chain and collect retained draws in chain-index order."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    model = SequenceModel(seq, ds)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    jobs = [(model, priors, config, algorithm, c, seeds[c]) for c in range(config.n_chains)]
    if config.threads > 1 and config.n_chains > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(lambda a: _run_chain(*a), jobs))
    else:
        results = [_run_chain(*a) for a in jobs]
    return DrawStore(
        param_names=list(model.param_names),
        targets=model.targets,
        params=[r[0] for r in results],
        completed=[r[1] for r in results],
        iterations=[r[2] for r in results],
        sequence=seq,
        dataset=ds,
        config=config,
        priors=priors,
        algorithm=algorithm,
        spec_hash=model.spec_hash(),
        acceptance=[r[3] for r in results],
        nonfinite=[r[4] for r in results],
        _model=model,
    )


def run_gibbs_da(seq, ds, priors: PriorSpec = PriorSpec(), config: ChainConfig = ChainConfig()) -> DrawStore:
    return run_sampler(seq, ds, priors, config, "gibbs_da")


def run_mda(seq, ds, priors: PriorSpec = PriorSpec(), config: ChainConfig = ChainConfig()) -> DrawStore:
    return run_sampler(seq, ds, priors, config, "mda")

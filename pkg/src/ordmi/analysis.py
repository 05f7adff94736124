"""Per-imputation maximum-likelihood analysis and Rubin's-rules pooling."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import expit, ndtri

from .errors import NumericalError
from .likelihood import binomial_logpmf, binomial_mean, from_unconstrained, ordinal_logpmf, to_unconstrained

log = logging.getLogger(__name__)

__all__ = [
    "FitResult",
    "PooledResult",
    "fit_cumulative_logit",
    "fit_glm_binomial",
    "clm_loglik",
    "clm_gradient",
    "rubin_pool",
    "analyze_miset",
    "tipping_point",
    "TippingResult",
]

SEPARATION_BOUND = 30.0
MAX_EXCLUDED = 0.05


@dataclass
class FitResult:
    """Maximum-likelihood fit.

    For cumulative-logit fits ``coef`` holds the K-1 cut-points followed by
    the regression coefficients; ``vcov`` is on the same natural scale.
    """

    coef: np.ndarray
    names: list
    vcov: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    flags: set = field(default_factory=set)
    n: float = 0.0

    def estimate(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    def se(self, name: str) -> float:
        j = self.names.index(name)
        return float(np.sqrt(self.vcov[j, j]))

    def variance(self, name: str) -> float:
        j = self.names.index(name)
        return float(self.vcov[j, j])


# -- cumulative logit -----------------------------------------------------------


def clm_loglik(cut, beta, X, y, weights=None) -> float:
    """Proportional-odds log-likelihood at natural parameters."""
    ll = ordinal_logpmf(cut, np.asarray(X) @ np.asarray(beta), y)
    return float(ll.sum() if weights is None else ll @ weights)


def _clm_derivs(cut, beta, X, y, w, K):
    """Log-likelihood, gradient and Hessian in natural parameters (cut, beta)."""
    n, p = X.shape
    nc = K - 1
    q = nc + p
    eta = X @ beta
    ext = np.concatenate([[-np.inf], cut, [np.inf]])
    a = ext[y] + eta
    b = ext[y - 1] + eta
    logp = ordinal_logpmf(cut, eta, y)
    prob = np.exp(logp)
    Fa, Fb = expit(a), expit(b)
    fa, fb = Fa * (1 - Fa), Fb * (1 - Fb)
    ga, gb = fa * (1 - 2 * Fa), fb * (1 - 2 * Fb)
    U = np.zeros((n, q))
    L = np.zeros((n, q))
    rows = np.arange(n)
    up = y <= nc
    lo = y >= 2
    U[rows[up], y[up] - 1] = 1.0
    L[rows[lo], y[lo] - 2] = 1.0
    U[:, nc:] = X
    L[:, nc:] = X
    G = (fa[:, None] * U - fb[:, None] * L) / prob[:, None]
    grad = w @ G
    H = (U * (w * ga / prob)[:, None]).T @ U - (L * (w * gb / prob)[:, None]).T @ L - (G * w[:, None]).T @ G
    return float(w @ logp), grad, H


def _cut_jacobian(v):
    nc = v.size
    J = np.zeros((nc, nc))
    J[:, 0] = 1.0
    ev = np.exp(v[1:])
    for m in range(1, nc):
        J[m:, m] = ev[m - 1]
    return J


def clm_gradient(cut, beta, X, y, weights=None):
    """Analytic gradient of :func:`clm_loglik` in (cut, beta)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.intp)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    return _clm_derivs(np.asarray(cut, float), np.asarray(beta, float), X, y, w, len(cut) + 1)[1]


def _newton(objective, theta, maxiter, max_halvings, gtol=1e-8, ftol=1e-12):
    """Damped Newton ascent.  ``objective(theta) -> (ll, grad, hess)``."""
    ll, grad, H = objective(theta)
    if not np.isfinite(ll):
        raise NumericalError("log-likelihood is not finite at the starting values")
    converged = bool(np.max(np.abs(grad)) < gtol)
    it = 0
    while not converged and it < maxiter:
        it += 1
        negH = -H
        lam = 0.0
        for _ in range(30):
            try:
                np.linalg.cholesky(negH + lam * np.eye(len(theta)))
                break
            except np.linalg.LinAlgError:
                lam = max(2 * lam, 1e-8 * max(1.0, np.abs(np.diag(negH)).max()))
        step = np.linalg.solve(negH + lam * np.eye(len(theta)), grad)
        t = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            cand = theta + t * step
            try:
                ll_new, g_new, H_new = objective(cand)
            except FloatingPointError:
                ll_new = -np.inf
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        change = abs(ll_new - ll) / (abs(ll) + 1e-300)
        theta, ll, grad, H = cand, ll_new, g_new, H_new
        if np.max(np.abs(grad)) < gtol or change < ftol:
            converged = True
            break
    return theta, ll, grad, H, converged, it


def fit_cumulative_logit(X, y, K: int, weights=None, names=None, maxiter: int = 50, max_halvings: int = 20) -> FitResult:
    """Proportional-odds regression ``logit Pr(y <= k) = c_k + X beta``.

    Newton-Raphson in the unconstrained cut-point space with step halving;
    the covariance is the inverse observed information mapped back to
    (cut-points, beta) by the delta method.  ``X`` has no intercept column.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y)
    if np.isnan(y.astype(float)).any():
        raise ValueError("response has missing values")
    y = y.astype(np.intp)
    if K < 2:
        raise ValueError("K must be >= 2")
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    nc = K - 1
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(p)]
    all_names = [f"c{k}" for k in range(1, K)] + names
    flags = set()
    counts = np.array([w[y == k].sum() for k in range(1, K + 1)])
    if (counts == 0).any():
        # an empty category pushes a cut-point gap to 0 or a tail cut to infinity
        flags.update({"empty_category", "nonestimable_cutpoints"})
    sm = counts + 0.5
    cum = np.cumsum(sm)[:-1] / sm.sum()
    v0 = to_unconstrained(np.log(cum / (1 - cum)))
    theta0 = np.concatenate([v0, np.zeros(p)])

    def objective(theta):
        v = theta[:nc]
        if np.any(v[1:] > 30):
            return -np.inf, None, None
        cut = from_unconstrained(v)
        ll, g, H = _clm_derivs(cut, theta[nc:], X, y, w, K)
        Jc = _cut_jacobian(v)
        J = np.eye(nc + p)
        J[:nc, :nc] = Jc
        gv = J.T @ g
        Hv = J.T @ H @ J
        # curvature of the exp map
        tail = np.cumsum(g[:nc][::-1])[::-1]
        Hv[np.arange(1, nc), np.arange(1, nc)] += np.exp(v[1:]) * tail[1:]
        return ll, gv, Hv

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        theta, ll, grad, H, converged, it = _newton(objective, theta0, maxiter, max_halvings)
    v = theta[:nc]
    cut = from_unconstrained(v)
    coef = np.concatenate([cut, theta[nc:]])
    J = np.eye(nc + p)
    J[:nc, :nc] = _cut_jacobian(v)
    try:
        vcov_v = np.linalg.inv(-H)
        vcov = J @ vcov_v @ J.T
        vcov = 0.5 * (vcov + vcov.T)
    except np.linalg.LinAlgError:
        vcov = np.full((nc + p, nc + p), np.nan)
        converged = False
    if "nonestimable_cutpoints" in flags:
        converged = False
    if p and np.any(np.abs(theta[nc:]) > SEPARATION_BOUND):
        flags.add("separation")
    return FitResult(coef, all_names, vcov, ll, converged, it, flags, float(w.sum()))


# -- binomial GLM ---------------------------------------------------------------

_LINK_FUN = {
    "logit": lambda m: np.log(m / (1 - m)),
    "probit": ndtri,
    "cloglog": lambda m: np.log(-np.log1p(-m)),
    "log": np.log,
}


def _dmu_deta(eta, link):
    if link == "logit":
        m = expit(eta)
        return m * (1 - m)
    if link == "probit":
        return stats.norm.pdf(eta)
    if link == "cloglog":
        return np.exp(eta - np.exp(eta))
    return np.exp(eta)


def fit_glm_binomial(X, y, link: str = "logit", weights=None, names=None, maxiter: int = 50,
                     max_halvings: int = 20) -> FitResult:
    """Binomial GLM for 0/1 ``y``; ``X`` includes the intercept column.

    The logit link uses Newton-Raphson on the observed information; other
    links use Fisher scoring and report the inverse expected information.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    names = list(names) if names is not None else ["(Intercept)"] + [f"x{j}" for j in range(1, p)]
    ybar = np.clip((w @ y + 0.5) / (w.sum() + 1.0), 1e-6, 1 - 1e-6)
    theta0 = np.zeros(p)
    theta0[0] = _LINK_FUN[link](ybar)

    def objective(beta):
        eta = X @ beta
        ll = float(w @ binomial_logpmf(eta, y, link))
        if not np.isfinite(ll):
            return -np.inf, None, None
        mu = np.clip(binomial_mean(eta, link), 1e-300, 1 - 1e-16)
        d = _dmu_deta(eta, link)
        var = mu * (1 - mu)
        grad = X.T @ (w * (y - mu) * d / var)
        info = (X * (w * d * d / var)[:, None]).T @ X
        return ll, grad, -info

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        beta, ll, grad, H, converged, it = _newton(objective, theta0, maxiter, max_halvings)
    try:
        vcov = np.linalg.inv(-H)
        vcov = 0.5 * (vcov + vcov.T)
    except np.linalg.LinAlgError:
        vcov = np.full((p, p), np.nan)
        converged = False
    flags = set()
    eta = X @ beta
    if np.any(np.abs(beta) > SEPARATION_BOUND) or (link == "logit" and np.any(np.abs(eta) > SEPARATION_BOUND)):
        flags.add("separation")
    return FitResult(beta, names, vcov, ll, converged, it, flags, float(w.sum()))


# -- pooling -------------------------------------------------------------------


@dataclass
class PooledResult:
    param: str
    estimate: float
    within: float
    between: float
    total: float
    df: float
    se: float
    ci: tuple
    p_value: float
    m: int
    n_excluded: int = 0
    level: float = 0.95

    def as_dict(self) -> dict:
        return {
            "param": self.param,
            "estimate": self.estimate,
            "between": self.between,
            "within": self.within,
            "total": self.total,
            "df": self.df,
            "se": self.se,
            "ci_low": self.ci[0],
            "ci_high": self.ci[1],
            "p_value": self.p_value,
            "m": self.m,
            "excluded": self.n_excluded,
        }


def rubin_pool(fits, param: str, level: float = 0.95, barnard_rubin: bool = False, dfcom: float | None = None,
               max_excluded: float = MAX_EXCLUDED) -> PooledResult:
    """Combine one parameter across imputations with Rubin's rules.

    ``W`` is the mean squared standard error, ``B`` the sample variance of
    the estimates (divisor M-1) and ``T = W + (1 + 1/M) B``.  With
    ``B = 0`` the degrees of freedom are infinite (normal reference).
    Non-converged fits are dropped; more than ``max_excluded`` of them is
    an error.
    """
    fits = list(fits)
    ok = [f for f in fits if f.converged]
    excluded = len(fits) - len(ok)
    if not ok:
        raise NumericalError(f"no converged fits to pool for {param!r}")
    if excluded:
        log.warning("%s: %d of %d fits did not converge and were excluded", param, excluded, len(fits))
        if excluded / len(fits) > max_excluded:
            raise NumericalError(
                f"{param}: {excluded} of {len(fits)} fits did not converge (> {max_excluded:.0%})"
            )
    q = np.array([f.estimate(param) for f in ok])
    u = np.array([f.variance(param) for f in ok])
    m = q.size
    qbar = float(q.mean())
    W = float(u.mean())
    B = float(q.var(ddof=1)) if m > 1 else 0.0
    T = W + (1.0 + 1.0 / m) * B
    if B > 0 and m > 1:
        r = (1.0 + 1.0 / m) * B / W
        df = (m - 1) * (1.0 + 1.0 / r) ** 2
        if barnard_rubin and dfcom is not None:
            gamma = (1.0 + 1.0 / m) * B / T
            dfobs = (dfcom + 1.0) / (dfcom + 3.0) * dfcom * (1.0 - gamma)
            df = 1.0 / (1.0 / df + 1.0 / dfobs)
    else:
        df = math.inf
    se = math.sqrt(T)
    ref = stats.norm if math.isinf(df) else stats.t(df)
    crit = ref.ppf(0.5 + level / 2)
    stat = qbar / se if se > 0 else math.inf
    p = float(2 * ref.sf(abs(stat)))
    return PooledResult(param, qbar, W, B, T, df, se, (qbar - crit * se, qbar + crit * se), p, m, excluded, level)


# -- analysis of imputed datasets -----------------------------------------------


def _fit_visit(ds, response, predictors):
    meta = ds.var(response)
    X = ds.values(predictors)
    y = ds.column(response)
    if meta.kind == "ordinal":
        return fit_cumulative_logit(X, y, meta.levels, names=predictors)
    Xi = np.column_stack([np.ones(len(y)), X])
    return fit_glm_binomial(Xi, y, names=["(Intercept)"] + list(predictors))


def analyze_miset(miset, analysis=None, by_visit: bool = True, adjust=(), level: float = 0.95,
                  visits=None, include_cutpoints: bool = False, barnard_rubin: bool = False) -> pd.DataFrame:
    """Fit and pool the analysis model on every completed dataset.

    With ``by_visit`` the model ``y_j ~ treatment (+ adjust)`` is fitted
    separately at each post-baseline visit (or at ``visits``); otherwise
    ``analysis`` (a ModelSpec, default the imputation sequence's analysis
    model) is fitted once.  Returns one row per (visit, parameter).
    """
    datasets = list(getattr(miset, "datasets", miset))
    if not datasets:
        raise ValueError("no imputed datasets")
    ds0 = datasets[0]
    tx = ds0.treatment_name
    if by_visit:
        targets = list(visits) if visits is not None else ds0.outcome_names[1:] or ds0.outcome_names
        jobs = [(t, [tx, *adjust]) for t in targets]
    else:
        spec = analysis if analysis is not None else miset.analysis
        jobs = [(spec.target, list(spec.predictors))]
    rows = []
    outcomes = ds0.outcome_names
    for job_no, (resp, preds) in enumerate(jobs, start=1):
        visit_no = outcomes.index(resp) if resp in outcomes else job_no
        fits = [_fit_visit(ds, resp, preds) for ds in datasets]
        names = fits[0].names
        params = names if include_cutpoints else [nm for nm in names if nm in preds or nm == "(Intercept)"]
        params = [nm for nm in params if nm != "(Intercept)"]
        dfcom = ds0.n - len(names)
        for prm in params:
            pooled = rubin_pool(fits, prm, level, barnard_rubin=barnard_rubin, dfcom=dfcom)
            rows.append({"visit": visit_no, "response": resp, **pooled.as_dict()})
    return pd.DataFrame(rows)


def format_table(results: dict) -> str:
    """Text table of pooled treatment effects by method and visit.

    ``results`` maps a method label to the frame from :func:`analyze_miset`.
    """
    lines = [f"{'Method':<8}{'Visit':>6}{'Estimate':>10}{'Between':>9}{'Within':>8}{'SE':>8}{'p':>9}"]
    for method, frame in results.items():
        first = True
        for _, r in frame.iterrows():
            label = method if first else ""
            lines.append(
                f"{label:<8}{int(r['visit']):>6}{r['estimate']:>10.3f}{r['between']:>9.3f}"
                f"{r['within']:>8.3f}{r['se']:>8.3f}{r['p_value']:>9.4f}"
            )
            first = False
    return "\n".join(lines) + "\n"


@dataclass
class TippingResult:
    table: pd.DataFrame
    crossing: float | None
    bracket: tuple | None
    first_nonsignificant: float | None
    message: str
    threshold: float = 0.05


def _crossing(deltas, pvals, threshold):
    sig = pvals < threshold
    best = None
    for i in range(len(deltas) - 1):
        if sig[i] != sig[i + 1]:
            mid = abs(deltas[i] + deltas[i + 1]) / 2
            if best is None or mid < best[0]:
                best = (mid, i)
    if best is None:
        return None
    i = best[1]
    d0, d1, p0, p1 = deltas[i], deltas[i + 1], pvals[i], pvals[i + 1]
    cross = d0 + (threshold - p0) * (d1 - d0) / (p1 - p0) if p1 != p0 else d0
    nonsig = d1 if sig[i] else d0
    return cross, (d0, d1), nonsig


def tipping_point(store, delta_grid, M: int = 100, minspace: int = 5, visit=None, param=None,
                  threshold: float = 0.05, level: float = 0.95, adjust=(), mi_setting=None) -> TippingResult:
    """Repeat delta-adjusted imputation and analysis over ``delta_grid``.

    The crossing is located between the adjacent grid points nearest to
    delta = 0 whose significance (p < ``threshold``) differs, with linear
    interpolation of the p-value.
    """
    from .controlled import MIMethod, extract_MIdata

    grid = [float(d) for d in delta_grid]
    if not grid:
        raise ValueError("delta grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("delta grid must be strictly ascending")
    ds = store.dataset
    param = param or ds.treatment_name
    visit = visit or ds.outcome_names[-1]
    rows = []
    for d in grid:
        mi = extract_MIdata(store, MIMethod("DELTA", d), M=M, minspace=minspace, mi_setting=mi_setting)
        res = analyze_miset(mi, visits=[visit], adjust=adjust, level=level)
        r = res[res["param"] == param].iloc[0]
        rows.append({"delta": d, **{k: r[k] for k in ("estimate", "between", "within", "total", "se", "df",
                                                       "ci_low", "ci_high", "p_value")}})
    table = pd.DataFrame(rows)
    found = _crossing(np.array(grid), table["p_value"].to_numpy(), threshold)
    if found is None:
        return TippingResult(table, None, None, None, "no tipping point in range", threshold)
    cross, bracket, nonsig = found
    msg = f"tipping point between delta={bracket[0]:g} and {bracket[1]:g} (interpolated {cross:.4f})"
    return TippingResult(table, cross, bracket, nonsig, msg, threshold)


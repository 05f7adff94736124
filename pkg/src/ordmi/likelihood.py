"""Cut-point reparameterisation and the ordinal / binomial likelihoods.

Ordinal models use ``Pr(y <= k) = expit(c_k + eta)`` with increasing
cut-points ``c_1 < ... < c_{K-1}``; a positive coefficient therefore moves
mass towards the lower categories.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, ndtr, ndtri

__all__ = [
    "CutPoints",
    "to_unconstrained",
    "from_unconstrained",
    "cumulative_probs",
    "category_probs",
    "ordinal_logpmf",
    "binomial_mean",
    "binomial_logpmf",
    "draw_ordinal",
    "draw_binary",
    "LINKS",
]


def to_unconstrained(c) -> np.ndarray:
    """Map increasing cut-points to ``(c_1, log(c_2 - c_1), ...)``."""
    c = np.asarray(c, dtype=float)
    gaps = np.diff(c)
    if not np.all(gaps > 0):
        raise ValueError(f"cut-points must be strictly increasing, got {c.tolist()}")
    return np.concatenate([c[:1], np.log(gaps)])


def from_unconstrained(v) -> np.ndarray:
    """Inverse of :func:`to_unconstrained`: ``c_k = c_{k-1} + exp(d_k)``."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return v.copy()
    return np.cumsum(np.concatenate([v[:1], np.exp(v[1:])]))


@dataclass(frozen=True)
class CutPoints:
    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.size and not np.all(np.diff(c) > 0):
            raise ValueError(f"cut-points must be strictly increasing, got {c.tolist()}")
        object.__setattr__(self, "c", c)

    @property
    def K(self) -> int:
        return self.c.size + 1

    def to_unconstrained(self) -> np.ndarray:
        return to_unconstrained(self.c)

    @classmethod
    def from_unconstrained(cls, v) -> "CutPoints":
        return cls(from_unconstrained(v))


def cumulative_probs(cut, eta) -> np.ndarray:
    """``Pr(y <= k)`` for k = 1..K-1; shape ``(len(eta), K-1)``."""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    return expit(np.asarray(cut, dtype=float)[None, :] + eta[:, None])


def category_probs(cut, eta) -> np.ndarray:
    """Category probabilities, shape ``(len(eta), K)``; rows sum to one."""
    cum = cumulative_probs(cut, eta)
    n = cum.shape[0]
    full = np.concatenate([np.zeros((n, 1)), cum, np.ones((n, 1))], axis=1)
    return np.diff(full, axis=1)


def ordinal_logpmf(cut, eta, y) -> np.ndarray:
    """Per-observation log-probability of category ``y`` (1..K).

    Uses ``log(F(a) - F(b)) = log F(a) + log F(-b) + log1p(-exp(b - a))``,
    which stays finite far into both tails.
    """
    ext = np.concatenate([[-np.inf], np.asarray(cut, dtype=float), [np.inf]])
    yi = np.asarray(y, dtype=np.intp)
    a = ext[yi] + eta
    b = ext[yi - 1] + eta
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        return log_expit(a) + log_expit(-b) + np.log1p(-np.exp(b - a))


def _cloglog_inv(eta):
    return -np.expm1(-np.exp(eta))


LINKS = {
    "logit": expit,
    "probit": ndtr,
    "cloglog": _cloglog_inv,
    "log": np.exp,
}


def binomial_mean(eta, link: str = "logit") -> np.ndarray:
    return LINKS[link](eta)


def binomial_logpmf(eta, y, link: str = "logit") -> np.ndarray:
    """Bernoulli log-likelihood terms for 0/1 ``y``."""
    y = np.asarray(y, dtype=float)
    if link == "logit":
        return y * log_expit(eta) + (1.0 - y) * log_expit(-eta)
    p = LINKS[link](eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(y > 0.5, np.log(p), np.log1p(-p))
    # log link: p > 1 has no likelihood
    return np.where(np.isfinite(out) & (p <= 1.0), out, -np.inf)


def draw_ordinal(cut, eta, u) -> np.ndarray:
    """Inverse-CDF draw: category ``1 + #{k : u > Pr(y <= k)}``."""
    cum = cumulative_probs(cut, eta)
    return 1.0 + (np.asarray(u)[:, None] > cum).sum(axis=1)


def draw_binary(eta, u, link: str = "logit") -> np.ndarray:
    return (np.asarray(u) < binomial_mean(eta, link)).astype(float)


def draw_normal(mean, sd, u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=float), np.finfo(float).tiny, 1.0 - 1e-16)
    return mean + sd * ndtri(u)

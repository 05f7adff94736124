"""Convergence diagnostics for retained draws."""
from __future__ import annotations

import numpy as np
import pandas as pd

from .errors import OrdmiError

__all__ = ["ConstantSeriesError", "autocorr", "gelman_rubin", "effective_size", "chain_summary"]


class ConstantSeriesError(OrdmiError, ValueError):
    """Autocorrelation is undefined for a series with zero variance."""


def autocorr(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags 0..max_lag (FFT, biased estimator).

    Raises
    ------
    ConstantSeriesError
        If the series has zero variance.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 2:
        raise ConstantSeriesError("need at least two values")
    x = x - x.mean()
    if not np.any(x):
        raise ConstantSeriesError("series is constant; autocorrelation undefined")
    max_lag = min(int(max_lag), n - 1)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    return acov / acov[0]


def _chains(store_or_array, parameter=None) -> np.ndarray:
    if parameter is not None:
        return store_or_array.param_series(parameter)
    return np.atleast_2d(np.asarray(store_or_array, dtype=float))


def gelman_rubin(store, parameter: str | None = None, split: bool = True) -> float:
    """Potential scale reduction factor.

    ``store`` is a :class:`DrawStore` (with ``parameter``) or an array of
    shape (chains, draws).  With ``split`` each chain is halved first.
    Identical chains give ``sqrt((n - 1) / n)`` without splitting, the
    value of the usual formula when the between-chain variance is zero.
    """
    x = _chains(store, parameter)
    if split:
        half = x.shape[1] // 2
        x = np.concatenate([x[:, :half], x[:, x.shape[1] - half:]])
    m, n = x.shape
    if m < 2 or n < 2:
        raise ValueError("R-hat needs at least two chains of two draws")
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else np.inf
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def effective_size(chains) -> float:
    """Effective sample size from the pooled ACF (initial monotone sequence)."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = x.shape
    rho = np.mean([autocorr(c, n - 1) for c in x], axis=0)
    total = 0.0
    prev = np.inf
    for k in range(1, n - 1, 2):
        pair = min(rho[k] + rho[k + 1], prev)
        if pair < 0:
            break
        total += pair
        prev = pair
    tau = max(1.0 + 2.0 * total, 1.0 / (m * n))
    return float(m * n / tau)


def chain_summary(store, params=None, max_lag: int = 1) -> pd.DataFrame:
    """Per-parameter posterior summary with R-hat, ESS and lag-1 ACF.

    Constant parameters are reported with ``flag="constant"`` and NaN
    diagnostics instead of raising.
    """
    params = list(params) if params is not None else list(store.param_names)
    rows = []
    for name in params:
        x = store.param_series(name)
        flat = x.ravel()
        row = {"param": name, "mean": np.nan, "sd": np.nan, "q2.5": np.nan, "q97.5": np.nan,
               "rhat": np.nan, "ess": np.nan, "acf1": np.nan, "flag": ""}
        if flat.size:
            row.update(mean=flat.mean(), sd=flat.std(ddof=1) if flat.size > 1 else np.nan,
                       **dict(zip(("q2.5", "q97.5"), np.quantile(flat, [0.025, 0.975]))))
        try:
            row["acf1"] = float(np.mean([autocorr(c, max_lag)[max_lag] for c in x]))
            row["ess"] = effective_size(x)
        except ConstantSeriesError:
            row["flag"] = "constant"
        except ValueError:
            row["flag"] = "too few draws"
        if x.shape[0] >= 2 and x.shape[1] >= 4 and not row["flag"]:
            row["rhat"] = gelman_rubin(x)
        rows.append(row)
    return pd.DataFrame(rows)

"""Data-generating processes for tests, demos and simulation studies."""
from __future__ import annotations

import numpy as np
import pandas as pd
from scipy.special import expit

from .data import VariableMeta, WideDataset
from .likelihood import draw_ordinal

__all__ = ["simulate_trial", "simulate_nimh_like", "ordinal_schema", "marginal_effect", "population_marginal_effect"]


def ordinal_schema(outcomes, K, covariates=None, treatment="tx", id_name="id"):
    meta = [VariableMeta(id_name, role="id"), VariableMeta(treatment, "binary", "treatment")]
    for name, (kind, levels) in (covariates or {}).items():
        meta.append(VariableMeta(name, kind, "covariate", levels))
    for j, name in enumerate(outcomes):
        meta.append(VariableMeta(name, "ordinal", "outcome", K, visit=j))
    return meta


def _sequential_outcomes(rng, tx, J, cuts, tx_effect, history):
    n = tx.size
    y = np.empty((n, J + 1))
    y[:, 0] = draw_ordinal(cuts[0], np.zeros(n), rng.random(n))
    for j in range(1, J + 1):
        eta = tx_effect[j] * tx + history[j] * y[:, j - 1]
        y[:, j] = draw_ordinal(cuts[j], eta, rng.random(n))
    return y


def _broadcast(value, J):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (J + 1,)).copy()
    arr[0] = 0.0
    return arr


def simulate_trial(n=400, K=4, J=3, tx_effect=1.0, history=-0.8, cuts=None, dropout=0.25,
                   mechanism="MCAR", p_treat=0.5, seed=None, return_full=False):
    """Two-arm trial with a sequential proportional-odds outcome.

    ``y0`` has no treatment effect; ``y_j`` (j >= 1) has linear predictor
    ``tx_effect * tx + history * y_{j-1}``.  With ``mechanism="MCAR"`` a
    fraction ``dropout`` of subjects leave at a uniformly chosen
    post-baseline visit; ``"MAR"`` makes the per-visit dropout hazard
    increase with the last observed category.
    """
    rng = np.random.default_rng(seed)
    if cuts is None:
        base = np.linspace(-1.5, 1.5, K - 1)
        cuts = [base] + [base - 2.2 * history for _ in range(J)]
    cuts = [np.asarray(c, dtype=float) for c in (cuts if len(cuts) == J + 1 else [cuts] * (J + 1))]
    tx = (rng.random(n) < p_treat).astype(float)
    y = _sequential_outcomes(rng, tx, J, cuts, _broadcast(tx_effect, J), _broadcast(history, J))
    full = y.copy()
    if mechanism == "MCAR":
        leaves = rng.random(n) < dropout
        at = rng.integers(1, J + 1, size=n)
        for i in np.flatnonzero(leaves):
            y[i, at[i]:] = np.nan
    elif mechanism == "MAR":
        alive = np.ones(n, bool)
        for j in range(1, J + 1):
            hazard = expit(np.log(dropout / J / (1 - dropout / J)) + 0.6 * (y[:, j - 1] - (K + 1) / 2))
            leave = alive & (rng.random(n) < hazard)
            alive &= ~leave
            y[~alive, j] = np.nan
    else:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    names = [f"y{j}" for j in range(J + 1)]
    frame = pd.DataFrame({"id": [f"S{i + 1:04d}" for i in range(n)], "tx": tx})
    for j, nm in enumerate(names):
        frame[nm] = y[:, j]
    ds = WideDataset(frame, ordinal_schema(names, K))
    if return_full:
        return ds, ds.with_values({nm: full[:, j] for j, nm in enumerate(names)})
    return ds


def simulate_nimh_like(seed=20240101, n=437, n_placebo=108, weeks=(0, 1, 3, 6), sparse_weeks=(2, 4, 5)):
    """Synthetic stand-in shaped like the schizophrenia trial.

    One outcome column ``y<week>`` per entry of ``weeks`` on a 4-level
    severity scale (1 = normal/borderline ... 4 = severely ill); lower is
    better, so a positive treatment coefficient means benefit.  Dropout
    is MAR (sicker patients leave more often), a few subjects miss an
    intermediate visit or the baseline, and weeks in ``sparse_weeks`` are
    observed for only about 5% of the subjects still in the study.
    """
    rng = np.random.default_rng(seed)
    weeks = [int(w) for w in weeks]
    J = len(weeks)
    tx = np.zeros(n)
    tx[rng.permutation(n)[: n - n_placebo]] = 1.0
    y = np.empty((n, J))
    y[:, 0] = draw_ordinal(np.array([-4.0, -1.8, 0.4]), np.zeros(n), rng.random(n))
    for j in range(1, J):
        w = weeks[j]
        cuts = np.array([-2.6, -0.5, 1.5]) + 0.1 * (w - 1)
        effect = 0.65 + 0.12 * w
        shift = -1.2 * (y[:, j - 1] - 3.0)
        y[:, j] = draw_ordinal(cuts, effect * tx + shift, rng.random(n))
    obs = y.copy()
    alive = np.ones(n, bool)
    last = y[:, 0].copy()
    for j in range(1, J):
        gap = weeks[j] - weeks[j - 1]
        base = np.log(0.07 * gap) if j > 1 else -3.0
        hazard = expit(base + 0.7 * (last - 3.0) - 0.3 * tx)
        leave = alive & (rng.random(n) < hazard)
        alive &= ~leave
        obs[~alive, j] = np.nan
        last = np.where(alive, y[:, j], last)
    for j in range(1, J - 1):
        later = ~np.isnan(obs[:, j + 1:]).all(axis=1)
        p_skip = 0.95 if weeks[j] in sparse_weeks else 0.03
        obs[(rng.random(n) < p_skip) & later, j] = np.nan
    obs[rng.random(n) < 0.01, 0] = np.nan
    names = [f"y{w}" for w in weeks]
    frame = pd.DataFrame({"id": [str(1100 + i) for i in range(n)], "tx": tx})
    for j, nm in enumerate(names):
        frame[nm] = obs[:, j]
    return WideDataset(frame, ordinal_schema(names, 4))


def marginal_effect(weights_treated, weights_control):
    """Proportional-odds log odds ratio between two category distributions.

    Fits ``logit Pr(y <= k) = c_k + effect * arm`` to the two-arm table
    with the given category counts (or probabilities) as weights.  Exact
    when the cumulative odds ratios are constant.
    """
    from .analysis import fit_cumulative_logit

    K = len(weights_treated)
    y = np.tile(np.arange(1, K + 1), 2)
    x = np.repeat([1.0, 0.0], K)[:, None]
    w = np.concatenate([weights_treated, weights_control]).astype(float)
    fit = fit_cumulative_logit(x, y, K, weights=w, names=["arm"])
    return float(fit.coef[-1])


def population_marginal_effect(n=400_000, seed=0, **dgp):
    """Large-sample value of the ``y_J ~ tx`` proportional-odds estimand."""
    ds, full = simulate_trial(n=n, dropout=0.0, seed=seed, return_full=True, **dgp)
    y = full.column(full.outcome_names[-1])
    tx = full.treatment.astype(float)
    K = full.K
    pt = np.array([(y[tx == 1] == k).sum() for k in range(1, K + 1)])
    pc = np.array([(y[tx == 0] == k).sum() for k in range(1, K + 1)])
    return marginal_effect(pt, pc)


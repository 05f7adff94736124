"""Small builders shared by the test modules."""
import numpy as np
import pandas as pd

from ordmi.data import WideDataset
from ordmi.simulate import ordinal_schema


def make_wide(rows, K=4, outcomes=None, covariates=None):
    """Build a dataset from (id, tx, y0, y1, ...) tuples; None = missing."""
    J1 = len(rows[0]) - 2 - len(covariates or {})
    outcomes = outcomes or [f"y{j}" for j in range(J1)]
    cols = ["id", "tx", *(covariates or {}), *outcomes]
    frame = pd.DataFrame([[np.nan if v is None else v for v in r] for r in rows], columns=cols)
    frame["id"] = frame["id"].astype(str)
    return WideDataset(frame, ordinal_schema(outcomes, K, covariates))


SCHIZOW_MISSING = {"y0": 2, "y1": 10, "y2": 423, "y3": 60, "y4": 427, "y5": 430, "y6": 100}


def schizow_like(seed=0):
    """Seven-visit K=4 dataset with the study's count for y2 and its visit-order ties."""
    rng = np.random.default_rng(seed)
    n = 437
    tx = np.zeros(n)
    tx[rng.permutation(n)[:329]] = 1
    y = rng.integers(1, 5, size=(n, 7)).astype(float)
    for j, (name, count) in enumerate(SCHIZOW_MISSING.items()):
        y[rng.permutation(n)[:count], j] = np.nan
    rows = [(str(1000 + i), tx[i], *(None if np.isnan(v) else v for v in y[i])) for i in range(n)]
    return make_wide(rows)

"""Loader for the NIMH schizophrenia collaborative study data.

The data are not bundled.  Point ``ORDMI_NIMH_CSV`` at a copy, or place
it at ``tests/data/schizo.csv``.  Two layouts are accepted:

* long: one row per subject and week with columns ``id``, ``tx``,
  ``week`` and the 4-level ordinal response ``imps79o``;
* wide: ``id``, ``tx`` and one column ``y<week>`` per visit.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pandas as pd

from .data import long_to_wide, WideDataset
from .errors import DataError
from .simulate import ordinal_schema

__all__ = ["NIMH_ENV", "find_nimh", "load_schizo"]

NIMH_ENV = "ORDMI_NIMH_CSV"
MAIN_WEEKS = (0, 1, 3, 6)


def find_nimh(extra=()) -> Path | None:
    """First existing candidate path for the study CSV, or None."""
    candidates = []
    if os.environ.get(NIMH_ENV):
        candidates.append(Path(os.environ[NIMH_ENV]))
    candidates.extend(Path(p) for p in extra)
    for p in candidates:
        if p.is_file():
            return p
    return None


def load_schizo(path, weeks=MAIN_WEEKS, response: str = "imps79o") -> WideDataset:
    """Read the study data as a wide dataset with columns ``y<week>``.

    ``weeks`` selects the visits; rows at other weeks are dropped.  Ordinal
    codes may be 1..4 or text labels of an ordered factor ``"1"``..``"4"``.
    """
    frame = pd.read_csv(path, na_values=["NA", ""], keep_default_na=False, dtype={"id": str})
    frame.columns = [c.strip().strip('"') for c in frame.columns]
    weeks = [int(w) for w in weeks]
    if "week" in frame.columns:
        if response not in frame.columns:
            raise DataError(f"{path}: long layout needs a {response!r} column")
        long = frame[["id", "tx", "week", response]].copy()
        long = long[np.isin(long["week"].astype(float), weeks)]
        long["week"] = long["week"].astype(float).astype(int)
        long[response] = pd.to_numeric(long[response], errors="coerce")
        ds = long_to_wide(long, "id", "week", response, "y", treatment="tx", kind="ordinal", levels=4,
                          times=weeks)
        return ds
    names = [f"y{w}" for w in weeks]
    absent = [c for c in ("id", "tx", *names) if c not in frame.columns]
    if absent:
        raise DataError(f"{path}: wide layout is missing column(s) {', '.join(absent)}")
    wide = frame[["id", "tx", *names]].copy()
    for c in ("tx", *names):
        wide[c] = pd.to_numeric(wide[c], errors="coerce")
    return WideDataset(wide, ordinal_schema(names, 4))

"""Reading a trial, reshaping it and looking at its missingness."""
import numpy as np

from ordmi import drop_no_followup, long_to_wide, missing_pattern, pattern_report, wide_to_long
from ordmi.plotting import pattern_svg
from ordmi.simulate import simulate_nimh_like

# A stand-in with the layout of the schizophrenia trial: baseline plus
# weeks 1, 3 and 6, four severity levels, 108 on placebo.
ds = simulate_nimh_like()
print(ds.n, "subjects,", ds.J, "follow-up visits, K =", ds.K)
print(ds.frame.head())

# Missing cells per column and the distinct observed/missing rows.
mp = missing_pattern(ds)
print(pattern_report(mp))
print("monotone:", mp.monotone)
print("last observed visit:", np.bincount(mp.dropout, minlength=ds.J + 1))

# Long format has one row per subject and visit.
long = wide_to_long(ds)
print(long.head(8))
back = long_to_wide(long, id_col="id", time_col="time", value_col="value", treatment="tx", levels=ds.K)
print("round trip equal:", back.equals(ds))

# Subjects seen only at baseline contribute nothing after it.
kept = drop_no_followup(ds)
print("without follow-up:", ds.n - kept.n)

with open("patterns.svg", "w") as fh:
    fh.write(pattern_svg(mp))

"""The command-line workflow on a simulated trial, driven from Python."""
import tempfile
from pathlib import Path

import pandas as pd

from ordmi.cli import main
from ordmi.simulate import simulate_trial

work = Path(tempfile.mkdtemp())
simulate_trial(n=200, J=3, dropout=0.3, seed=2).to_csv(work / "trial.csv")
(work / "run.toml").write_text("""\
[data]
path = "trial.csv"
outcomes = ["y0", "y1", "y2", "y3"]
levels = 4

[model]
formula = "y3 ~ tx + y0 + y1 + y2"

[sampler]
n_chains = 2
n_iter = 500
n_adapt = 300
seed = 5

[extract]
M = 20

[output]
dir = "out"
""")
cfg = ["--config", str(work / "run.toml")]

# Equivalent to `ordmi inspect --config run.toml` and so on.
assert main(["inspect", *cfg]) == 0
assert main(["run", *cfg]) == 0
for method in (["--method", "MAR"], ["--method", "J2R"], ["--method", "DELTA", "--delta", "-0.5"]):
    assert main(["extract", *cfg, *method]) == 0
mid = work / "out" / "midata"
assert main(["analyze", *cfg, *map(str, sorted(mid.glob("*.csv")))]) == 0
assert main(["tippingpoint", *cfg, "--grid=-2,-1,-0.5,0", "--M", "10"]) == 0

print(pd.read_csv(work / "out" / "analysis" / "tipping.csv").round(3))
print(sorted(str(p.relative_to(work / "out")) for p in (work / "out").rglob("*") if p.is_file()))

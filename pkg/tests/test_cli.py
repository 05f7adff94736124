import subprocess
import sys

import pandas as pd
import pytest

from ordmi import cli
from ordmi.cli import RunConfig, main
from ordmi.errors import ConfigError
from ordmi.simulate import simulate_trial

CONFIG = """\
[data]
path = "trial.csv"
outcomes = ["y0", "y1", "y2", "y3"]
levels = 4

[model]
formula = "y3 ~ tx + y0 + y1 + y2"

[sampler]
n_chains = 2
n_iter = 60
n_adapt = 60
seed = 5

[extract]
M = 4
minspace = 5
mc_size = 1000

[output]
dir = "out"
"""


@pytest.fixture()
def project(tmp_path):
    ds = simulate_trial(n=120, J=3, dropout=0.3, seed=17)
    (tmp_path / "trial.csv").write_text(ds.to_csv())
    (tmp_path / "run.toml").write_text(CONFIG)
    return tmp_path


def run(project, *argv):
    return main([argv[0], "--config", str(project / "run.toml"), *argv[1:]])


def tree_bytes(root, skip=("run.log",)):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
            and p.name not in skip}


class TestRunConfig:
    def test_round_trip(self):
        cfg = RunConfig({"data": {"path": "x.csv", "outcomes": ["y0", "y1"], "levels": 4,
                                  "covariates": {"site": {"kind": "categorical", "levels": 3}}},
                         "model": {"formula": "y1 ~ tx + y0", "order": ["y0"]},
                         "sampler": {"algorithm": "mda", "thin": 3},
                         "extract": {"method": "DELTA", "delta": -0.25},
                         "tipping": {"grid": [-1.0, 0.0]}})
        again = RunConfig.from_toml(cfg.to_toml())
        assert again == cfg
        assert RunConfig.from_toml(again.to_toml()).to_toml() == cfg.to_toml()

    def test_defaults_round_trip(self):
        assert RunConfig.from_toml(RunConfig().to_toml()) == RunConfig()

    @pytest.mark.parametrize("values", [{"bogus": {}}, {"sampler": {"chains": 2}},
                                        {"extract": {"method": "DELTA"}}, {"sampler": {"algorithm": "jags"}}])
    def test_rejects(self, values):
        with pytest.raises(ConfigError):
            RunConfig(values)

    def test_invalid_toml(self):
        with pytest.raises(ConfigError, match="TOML"):
            RunConfig.from_toml("[data\n")

    def test_relative_paths(self, tmp_path):
        (tmp_path / "c.toml").write_text('[data]\npath = "d.csv"\n')
        cfg = RunConfig.load(tmp_path / "c.toml")
        assert cfg.path(cfg["data"]["path"]) == tmp_path / "d.csv"


class TestInspect:
    def test_lists_models(self, project, capsys):
        assert run(project, "inspect") == 0
        out = capsys.readouterr().out
        assert "Order   model_formula" in out
        assert out.rstrip().splitlines()[-1].split(maxsplit=1)[1].strip() == "y3 ~ tx + y0 + y1 + y2"

    def test_complete_data(self, tmp_path, capsys):
        ds = simulate_trial(n=30, J=1, dropout=0.0, seed=1)
        (tmp_path / "c.csv").write_text(ds.to_csv())
        (tmp_path / "c.toml").write_text('[data]\npath = "c.csv"\noutcomes = ["y0", "y1"]\nlevels = 4\n'
                                         '[model]\nformula = "y1 ~ tx + y0"\n')
        assert main(["inspect", "--config", str(tmp_path / "c.toml")]) == 0
        assert "no missing values" in capsys.readouterr().out

    def test_bad_column(self, project, capsys):
        assert run(project, "inspect", "--formula", "y3 ~ tx + age") == 2
        assert "'age'" in capsys.readouterr().err

    def test_order_override(self, project, capsys):
        assert run(project, "inspect", "--order", "y2,y1") == 0
        lines = capsys.readouterr().out.rstrip().splitlines()
        assert lines[-3].split(maxsplit=1)[1].strip() == "y2 ~ tx + y0"

    def test_long_format(self, project, capsys):
        from ordmi.data import load_wide_csv, wide_to_long
        from ordmi.simulate import ordinal_schema

        ds = load_wide_csv(project / "trial.csv", ordinal_schema(["y0", "y1", "y2", "y3"], 4))
        wide_to_long(ds).to_csv(project / "long.csv", index=False)
        (project / "long.toml").write_text('[data]\npath = "long.csv"\nformat = "long"\nlevels = 4\n'
                                           '[model]\nformula = "y3 ~ tx + y0 + y1 + y2"\n')
        assert main(["inspect", "--config", str(project / "long.toml")]) == 0


class TestExitCodes:
    def test_missing_data_file(self, project, capsys):
        assert run(project, "inspect", "--data", "nope.csv") == 2

    def test_missing_config(self, tmp_path):
        assert main(["inspect", "--config", str(tmp_path / "none.toml")]) == 2

    def test_data_error(self, project):
        text = (project / "trial.csv").read_text().splitlines()
        parts = text[1].split(",")
        parts[2] = "7"
        (project / "trial.csv").write_text("\n".join([text[0], ",".join(parts), *text[2:]]) + "\n")
        assert run(project, "inspect") == 3

    def test_bad_threads_env(self, project, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "many")
        assert run(project, "run") == 2

    def test_strict_convergence(self, project, monkeypatch, capsys):
        monkeypatch.setattr(cli, "RHAT_LIMIT", 0.5)
        assert run(project, "run", "--strict-convergence") == 4
        assert "R-hat" in capsys.readouterr().err

    def test_delta_needs_value(self, project):
        assert run(project, "extract", "--method", "DELTA") == 2


class TestWorkflow:
    def test_zero_iterations(self, project):
        assert run(project, "run", "--n-iter", "0") == 0
        from ordmi.store import load_store

        assert load_store(project / "out" / "store").total_retained == 0

    def test_run_outputs_and_idempotence(self, project, tmp_path, monkeypatch):
        assert run(project, "run") == 0
        out = project / "out"
        for rel in ("store/draws.npz", "store/meta.json", "config.toml", "diagnostics/summary.csv",
                    "diagnostics/trace_y3_tx.svg", "run.log"):
            assert (out / rel).exists(), rel
        first = tree_bytes(out)
        assert run(project, "run") == 0
        assert tree_bytes(out) == first
        monkeypatch.setenv(cli.THREADS_ENV, "2")
        assert run(project, "run", "--out", str(tmp_path / "threads")) == 0
        assert tree_bytes(tmp_path / "threads") == first
        saved = RunConfig.load(out / "config.toml")
        assert saved["sampler"]["seed"] == 5 and saved["model"]["formula"] == "y3 ~ tx + y0 + y1 + y2"

    def test_extract_analyze_tipping(self, project, capsys):
        assert run(project, "run") == 0
        assert run(project, "extract") == 0
        assert run(project, "extract", "--method", "CR", "--M", "2") == 0
        assert run(project, "extract", "--method", "delta", "--delta", "-0.5") == 0
        mid = project / "out" / "midata"
        assert sorted(p.name for p in mid.iterdir()) == ["CR.csv", "CR.json", "DELTA_-0.5.csv", "DELTA_-0.5.json",
                                                         "MAR.csv", "MAR.json"]
        before = (mid / "MAR.csv").read_bytes()
        assert run(project, "extract") == 0
        assert (mid / "MAR.csv").read_bytes() == before
        assert run(project, "extract", "--seed", "8") == 0
        assert (mid / "MAR.csv").read_bytes() != before

        capsys.readouterr()
        assert run(project, "analyze", str(mid / "MAR.csv"), str(mid / "CR.csv")) == 0
        table = capsys.readouterr().out.splitlines()
        assert table[0].split()[:3] == ["Method", "Visit", "Estimate"]
        assert [ln.split()[0] for ln in table[1:] if not ln.startswith(" ")] == ["MAR", "CR"]
        pooled = pd.read_csv(project / "out" / "analysis" / "pooled.csv")
        cr = pooled[pooled["method"] == "CR"]
        assert len(cr) == 3 and (cr["m"] == 2).all()
        assert ((cr["total"] - cr["within"]) - 1.5 * cr["between"]).abs().max() < 1e-5

        assert run(project, "tippingpoint", "--grid=-2,-1,0", "--M", "3") == 0
        tip = pd.read_csv(project / "out" / "analysis" / "tipping.csv")
        assert tip["delta"].tolist() == [-2.0, -1.0, 0.0]
        assert (project / "out" / "analysis" / "tipping.svg").read_text().count("<svg") == 1

    def test_extract_too_many(self, project, capsys):
        assert run(project, "run") == 0
        assert run(project, "extract", "--M", "500") == 2
        assert "requires" in capsys.readouterr().err

    def test_tipping_needs_grid(self, project):
        assert run(project, "run") == 0
        assert run(project, "tippingpoint") == 2


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "ordmi.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("inspect", "run", "extract", "analyze", "tippingpoint"):
        assert cmd in res.stdout

import numpy as np
import pytest

from ordmi.models import build_sequence, parse_formula
from ordmi.sampler import ChainConfig, run_gibbs_da, run_mda
from ordmi.simulate import simulate_trial

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_trial():
    return simulate_trial(n=200, K=4, J=3, dropout=0.3, seed=5)


@pytest.fixture(scope="session")
def gap_trial():
    """MCAR trial with a few intermittent gaps added."""
    ds = simulate_trial(n=160, K=4, J=3, dropout=0.3, seed=8)
    y = ds.outcomes().copy()
    rng = np.random.default_rng(1)
    later = ~np.isnan(y[:, 3])
    gap = later & (rng.random(ds.n) < 0.1)
    y[gap, 1] = np.nan
    return ds.with_values({f"y{j}": y[:, j] for j in range(4)})


@pytest.fixture(scope="session")
def gap_seq(gap_trial):
    return build_sequence(parse_formula("y3 ~ tx + y0 + y1 + y2"), gap_trial)


@pytest.fixture(scope="session")
def gap_store(gap_trial, gap_seq):
    return run_gibbs_da(gap_seq, gap_trial, config=ChainConfig(n_chains=2, n_iter=100, n_adapt=100, seed=21))


@pytest.fixture(scope="session")
def gap_store_mda(gap_trial, gap_seq):
    return run_mda(gap_seq, gap_trial, config=ChainConfig(n_chains=2, n_iter=100, n_adapt=100, seed=21))

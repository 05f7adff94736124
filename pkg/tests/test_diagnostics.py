import numpy as np
import pytest

from ordmi.diagnostics import ConstantSeriesError, autocorr, chain_summary, effective_size, gelman_rubin


def ar1(rng, n, phi):
    x = np.empty(n)
    x[0] = rng.normal()
    e = rng.normal(size=n) * np.sqrt(1 - phi ** 2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


class TestAutocorr:
    def test_lag_zero(self):
        assert autocorr(np.random.default_rng(0).normal(size=50), 5)[0] == 1.0

    def test_iid_lag_one(self):
        acf = autocorr(np.random.default_rng(1).normal(size=100_000), 3)
        assert abs(acf[1]) < 0.02

    def test_matches_direct_sum(self):
        x = np.random.default_rng(2).normal(size=200)
        xc = x - x.mean()
        direct = [xc[: x.size - k] @ xc[k:] / (xc @ xc) for k in range(6)]
        np.testing.assert_allclose(autocorr(x, 5), direct, atol=1e-12)

    def test_ar1(self):
        acf = autocorr(ar1(np.random.default_rng(3), 50_000, 0.7), 2)
        assert acf[1] == pytest.approx(0.7, abs=0.02)
        assert acf[2] == pytest.approx(0.49, abs=0.03)

    def test_constant_series_raises(self):
        with pytest.raises(ConstantSeriesError):
            autocorr(np.full(10, 3.0), 2)

    def test_lag_capped(self):
        assert autocorr([1.0, 2.0, 4.0], 10).size == 3


class TestGelmanRubin:
    def test_identical_chains(self):
        x = np.random.default_rng(4).normal(size=400)
        # zero between-chain variance: the formula gives sqrt((n - 1) / n)
        assert gelman_rubin(np.stack([x, x]), split=False) == pytest.approx(np.sqrt(399 / 400), abs=1e-15)

    def test_same_distribution_near_one(self):
        rng = np.random.default_rng(5)
        assert gelman_rubin(rng.normal(size=(4, 5000))) == pytest.approx(1.0, abs=0.01)

    def test_shifted_chain_detected(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 1000))
        x[1] += 3
        assert gelman_rubin(x) > 1.5

    def test_split_detects_trend(self):
        t = np.linspace(0, 5, 1000)
        x = np.stack([t, t]) + np.random.default_rng(7).normal(scale=0.1, size=(2, 1000))
        assert gelman_rubin(x, split=False) < 1.01 < gelman_rubin(x)

    def test_needs_two_chains(self):
        with pytest.raises(ValueError):
            gelman_rubin(np.ones((1, 10)), split=False)


def test_effective_size():
    rng = np.random.default_rng(8)
    assert effective_size(rng.normal(size=(2, 5000))) == pytest.approx(10_000, rel=0.1)
    phi = 0.8
    ess = effective_size(np.stack([ar1(rng, 50_000, phi) for _ in range(4)]))
    assert ess == pytest.approx(200_000 * (1 - phi) / (1 + phi), rel=0.1)


def test_chain_summary(gap_store):
    tab = chain_summary(gap_store)
    assert list(tab.columns) == ["param", "mean", "sd", "q2.5", "q97.5", "rhat", "ess", "acf1", "flag"]
    assert list(tab["param"]) == gap_store.param_names
    assert (tab["flag"] == "").all()
    assert (tab["rhat"] < 1.5).all() and (tab["q2.5"] < tab["q97.5"]).all()


def test_chain_summary_flags_constant(gap_store):
    from dataclasses import replace

    frozen = replace(gap_store, params=[np.zeros_like(p) for p in gap_store.params])
    tab = chain_summary(frozen, params=["y3:tx"])
    assert tab["flag"][0] == "constant" and np.isnan(tab["rhat"][0])

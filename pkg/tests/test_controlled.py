import json
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.special import expit

from ordmi.analysis import analyze_miset
from ordmi.controlled import (
    MIMethod,
    draw_rng,
    extract_MIdata,
    impute_cr,
    impute_delta,
    impute_j2r,
    impute_mar,
    marginal_effects,
    read_stacked_csv,
    select_draws,
)
from ordmi.data import missing_pattern
from ordmi.errors import ConfigError, InsufficientDrawsError
from ordmi.models import build_sequence, parse_formula
from ordmi.sampler import ChainConfig, run_gibbs_da
from ordmi.simulate import simulate_trial

from helpers import make_wide

METHODS = [MIMethod("MAR"), MIMethod("DELTA", 0.0), MIMethod("DELTA", 5.0), MIMethod("DELTA", -3.0),
           MIMethod("CR"), MIMethod("J2R")]


def impute(store, g, method, seed=99, mc_size=2000):
    from ordmi.controlled import _impute

    return _impute(store, g, method, draw_rng(seed, g), mc_size)


def zero_treatment(store):
    """Copy of ``store`` with every treatment coefficient set to zero."""
    cols = [store.param_names.index(nm) for nm in store.treatment_params()]
    params = []
    for p in store.params:
        q = p.copy()
        q[:, cols] = 0.0
        params.append(q)
    return replace(store, params=params)


@pytest.fixture(scope="module")
def wide_store():
    """Large trial with heavy dropout and a short chain."""
    ds = simulate_trial(n=2000, J=2, dropout=0.6, seed=30)
    seq = build_sequence(parse_formula("y2 ~ tx + y0 + y1"), ds)
    return run_gibbs_da(seq, ds, config=ChainConfig(n_chains=1, n_iter=4, n_adapt=200, seed=31))


class TestMethod:
    def test_validation(self):
        with pytest.raises(ConfigError):
            MIMethod("DELTA")
        with pytest.raises(ConfigError):
            MIMethod("MNAR")
        with pytest.raises(ConfigError):
            MIMethod("DELTA", float("inf"))
        assert MIMethod("j2r").tag == "J2R"
        assert MIMethod.parse("CR", 0.5).delta is None

    def test_per_visit_delta(self):
        m = MIMethod("DELTA", {"y2": -1.0})
        assert (m.delta_for("y2"), m.delta_for("y1")) == (-1.0, 0.0)
        assert MIMethod("DELTA", 0.3).delta_for("y1") == 0.3


class TestSelectDraws:
    def test_even_stride(self):
        picks = select_draws(SimpleNamespace(total_retained=1000), 100, 5)
        assert [g + 1 for g in picks] == list(range(10, 1001, 10))

    def test_single_draw_is_last(self):
        assert select_draws(SimpleNamespace(total_retained=37), 1, 1) == [36]

    def test_insufficient(self):
        with pytest.raises(InsufficientDrawsError, match=r"250.*100"):
            select_draws(SimpleNamespace(total_retained=100), 50, 5)

    def test_stride_at_least_minspace(self):
        picks = select_draws(SimpleNamespace(total_retained=523), 17, 7)
        assert len(picks) == 17 and min(np.diff(picks)) >= 7 and picks[-1] < 523


class TestInvariants:
    @pytest.mark.parametrize("method", METHODS, ids=str)
    def test_observed_cells_preserved(self, gap_store, gap_trial, method):
        out = impute(gap_store, 7, method)
        y, z = gap_trial.outcomes(), out.outcomes()
        seen = ~np.isnan(y)
        assert not np.isnan(z).any()
        np.testing.assert_array_equal(z[seen], y[seen])
        assert out.frame["id"].tolist() == gap_trial.frame["id"].tolist()

    def test_delta_zero_is_mar(self, gap_store):
        for g in (0, 50, 199):
            assert impute(gap_store, g, MIMethod("DELTA", 0.0)).equals(impute(gap_store, g, MIMethod("MAR")))

    @pytest.mark.parametrize("method", METHODS[2:], ids=str)
    def test_control_arm_and_completers_match_mar(self, gap_store, gap_trial, method):
        mp = missing_pattern(gap_trial)
        control = gap_trial.treatment == 0
        completer = (mp.dropout == gap_trial.J) & np.array([not s for s in mp.intermittent])
        for g in (3, 120):
            mar = impute(gap_store, g, MIMethod("MAR")).outcomes()
            alt = impute(gap_store, g, method).outcomes()
            np.testing.assert_array_equal(alt[control], mar[control])
            np.testing.assert_array_equal(alt[completer], mar[completer])
            if method.tag != "DELTA" or method.delta != 0.0:
                treated_drop = ~control & (mp.dropout < gap_trial.J)
                assert not np.array_equal(alt[treated_drop], mar[treated_drop]) or g != 120

    def test_intermittent_cells_stay_mar(self, gap_store, gap_trial):
        mp = missing_pattern(gap_trial)
        gaps = [i for i, s in enumerate(mp.intermittent) if s]
        assert gaps
        mar = impute(gap_store, 11, MIMethod("MAR")).outcomes()
        alt = impute(gap_store, 11, MIMethod("DELTA", -4.0)).outcomes()
        np.testing.assert_array_equal(alt[gaps, 1], mar[gaps, 1])

    def test_no_missing_returns_input(self):
        ds = simulate_trial(n=60, J=1, dropout=0.0, seed=2)
        seq = build_sequence(parse_formula("y1 ~ tx + y0"), ds)
        store = run_gibbs_da(seq, ds, config=ChainConfig(n_chains=1, n_iter=3, n_adapt=3))
        rng = np.random.default_rng(0)
        assert impute_mar(store, 0, rng).equals(ds)
        assert impute_j2r(store, 2, rng, mc_size=1000).equals(ds)

    def test_public_wrappers(self, gap_store):
        a = impute_delta(gap_store, 5, 0.7, draw_rng(1, 5))
        assert a.equals(impute(gap_store, 5, MIMethod("DELTA", 0.7), seed=1))
        assert impute_cr(gap_store, 5, draw_rng(1, 5)).equals(impute(gap_store, 5, MIMethod("CR"), seed=1))
        assert impute_mar(gap_store, 5, draw_rng(1, 5)).equals(impute(gap_store, 5, MIMethod("MAR"), seed=1))


class TestZeroTreatmentEffect:
    def test_cr_equals_mar(self, gap_store):
        flat = zero_treatment(gap_store)
        for g in (0, 77):
            assert impute(flat, g, MIMethod("CR")).equals(impute(flat, g, MIMethod("MAR")))

    def test_j2r_equals_mar_for_identical_arms(self, gap_store):
        flat = zero_treatment(gap_store)
        state = flat.state(10)
        effects = marginal_effects(flat.model, state, 5000, np.random.default_rng(0))
        assert all(v == 0.0 for v in effects.values())
        mar = extract_MIdata(flat, "MAR", M=10, minspace=5)
        j2r = extract_MIdata(flat, "J2R", M=10, minspace=5, mc_size=2000)
        a = analyze_miset(mar)["estimate"].to_numpy()
        b = analyze_miset(j2r)["estimate"].to_numpy()
        assert np.max(np.abs(a - b)) < 0.02


class TestJ2RMarginalEffect:
    def test_single_visit_equals_coefficient(self):
        ds = simulate_trial(n=300, J=1, dropout=0.3, seed=40, tx_effect=1.2)
        seq = build_sequence(parse_formula("y1 ~ tx"), ds)
        store = run_gibbs_da(seq, ds, config=ChainConfig(n_chains=1, n_iter=5, n_adapt=100, seed=41))
        state = store.state(4)
        alpha = state["y1"].treatment_coef("tx")
        reps = np.array([marginal_effects(store.model, state, 10_000, np.random.default_rng(s))["y1"]
                         for s in range(20)])
        mcse = reps.std(ddof=1) / np.sqrt(reps.size)
        assert abs(reps.mean() - alpha) < 2 * mcse + 1e-12

    def test_matches_exact_enumeration(self, gap_store):
        from itertools import product

        from ordmi.likelihood import category_probs
        from ordmi.simulate import marginal_effect

        state = gap_store.state(150)
        y0 = gap_store.dataset.column("y0")
        eff = marginal_effects(gap_store.model, state, 20_000, np.random.default_rng(1))
        assert set(eff) == {"y1", "y2", "y3"}
        # exact marginal of y3 per arm: sum over every (y1, y2) path, averaged over y0
        exact = {}
        for arm in (1.0, 0.0):
            probs = np.zeros(4)
            for y1, y2 in product(range(1, 5), repeat=2):
                p1 = category_probs(state["y1"].cut, state["y1"].coef @ [arm, 0] + state["y1"].coef[1] * y0)[:, y1 - 1]
                p2 = category_probs(state["y2"].cut, np.column_stack([np.full_like(y0, arm), y0, np.full_like(y0, y1)])
                                    @ state["y2"].coef)[:, y2 - 1]
                X3 = np.column_stack([np.full_like(y0, arm), y0, np.full_like(y0, y1), np.full_like(y0, y2)])
                p3 = category_probs(state["y3"].cut, X3 @ state["y3"].coef)
                probs += ((p1 * p2)[:, None] * p3).mean(axis=0)
            exact[arm] = probs
        delta = marginal_effect(exact[1.0], exact[0.0])
        assert eff["y3"] == pytest.approx(delta, abs=0.05)

    def test_small_mc_warns(self, gap_store):
        with pytest.warns(UserWarning, match="mc_size"):
            marginal_effects(gap_store.model, gap_store.state(0), 200, np.random.default_rng(0))


class TestDeltaDistribution:
    def _first_post_dropout(self, store):
        """(rows, visit index) of treated subjects' first missing visit after dropout."""
        ds = store.dataset
        mp = missing_pattern(ds)
        rows = np.flatnonzero((ds.treatment == 1) & (mp.dropout < ds.J))
        return rows, mp.dropout[rows] + 1

    @pytest.mark.parametrize("delta", [-10.0, -1.0])
    def test_closed_form(self, wide_store, delta):
        model = wide_store.model
        state = wide_store.state(3)
        rows, visit = self._first_post_dropout(wide_store)
        expected, hits, total = 0.0, 0.0, 0
        y_obs = wide_store.dataset.outcomes()
        reps = 100_000 // rows.size + 1
        outs = [impute(wide_store, 3, MIMethod("DELTA", delta), seed=s).outcomes() for s in range(reps)]
        for j in (1, 2):
            r = rows[visit == j]
            p = state[f"y{j}"]
            X = model.design(model.nodes[j - 1], model.values, r)
            eta = X @ p.coef + delta
            expected += (1 - expit(p.cut[-1] + eta)).sum() * reps
            total += r.size * reps
            hits += sum((o[r, j] == 4).sum() for o in outs)
            assert not np.isnan(y_obs[r, j - 1]).any()
        assert total >= 100_000
        assert hits / total == pytest.approx(expected / total, abs=0.01)

    def test_monotone_direction(self, wide_store):
        rows, _ = self._first_post_dropout(wide_store)
        lo, hi = [], []
        for s in range(14):
            lo.append(impute(wide_store, s % 4, MIMethod("DELTA", -1.0), seed=s).outcomes()[rows, 1:])
            hi.append(impute(wide_store, s % 4, MIMethod("DELTA", 1.0), seed=s).outcomes()[rows, 1:])
        obs = np.isnan(wide_store.dataset.outcomes()[rows, 1:])
        lo = np.concatenate([a[obs] for a in lo])
        hi = np.concatenate([a[obs] for a in hi])
        assert lo.size >= 10_000
        for k in (1, 2, 3):
            assert np.mean(lo <= k) <= np.mean(hi <= k)
        assert lo.mean() > hi.mean()


class TestExtract:
    def test_toy_mar(self):
        rows = [(f"s{i}", i % 2, 1 + i % 4, 1 + (i * 3) % 4) for i in range(40)]
        rows[3] = ("s3", 1, 2, None)
        rows[8] = ("s8", 0, 1, None)
        ds = make_wide(rows)
        seq = build_sequence(parse_formula("y1 ~ tx + y0"), ds)
        store = run_gibbs_da(seq, ds, config=ChainConfig(n_chains=1, n_iter=20, n_adapt=20))
        mi = extract_MIdata(store, "MAR", M=2, minspace=5)
        assert mi.M == 2
        for out in mi.datasets:
            assert not np.isnan(out.outcomes()).any()
            keep = [i for i in range(40) if i not in (3, 8)]
            np.testing.assert_array_equal(out.outcomes()[keep], ds.outcomes()[keep])

    def test_delta_provenance(self, gap_store):
        mi = extract_MIdata(gap_store, MIMethod("DELTA", 0.1), M=40, minspace=5)
        assert mi.M == 40
        assert {p["delta"] for p in mi.provenance} == {0.1}
        assert {p["method"] for p in mi.provenance} == {"DELTA"}
        draws = [p["draw"] for p in mi.provenance]
        assert min(np.diff(draws)) >= 5
        assert {p["chain"] for p in mi.provenance} == {1, 2}
        assert all(p["seed"] == gap_store.seed for p in mi.provenance)

    def test_cr_provenance_has_no_delta(self, gap_store):
        mi = extract_MIdata(gap_store, "CR", M=2, minspace=5)
        assert [p["delta"] for p in mi.provenance] == [None, None]

    def test_seed_override(self, gap_store):
        a = extract_MIdata(gap_store, "MAR", M=3, minspace=5)
        b = extract_MIdata(gap_store, "MAR", M=3, minspace=5, mi_setting={"seed": 12345})
        assert [p["draw"] for p in a.provenance] == [p["draw"] for p in b.provenance]
        assert [p["seed"] for p in b.provenance] == [12345] * 3
        assert not all(x.equals(y) for x, y in zip(a.datasets, b.datasets))
        again = extract_MIdata(gap_store, "MAR", M=3, minspace=5)
        assert all(x.equals(y) for x, y in zip(a.datasets, again.datasets))

    def test_bad_setting(self, gap_store):
        with pytest.raises(ConfigError):
            extract_MIdata(gap_store, "MAR", M=2, mi_setting={"seeds": 1})

    def test_empty_store(self, gap_store):
        empty = replace(gap_store, params=[p[:0] for p in gap_store.params],
                        completed=[c[:0] for c in gap_store.completed])
        with pytest.raises(InsufficientDrawsError):
            extract_MIdata(empty, "MAR", M=1, minspace=1)

    def test_too_many(self, gap_store):
        with pytest.raises(InsufficientDrawsError):
            extract_MIdata(gap_store, "MAR", M=100, minspace=5)

    def test_csv_round_trip(self, gap_store, tmp_path):
        mi = extract_MIdata(gap_store, MIMethod("DELTA", -0.5), M=3, minspace=5)
        path = tmp_path / "mi.csv"
        mi.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header.startswith(".imp,.id,tx,")
        side = json.loads(path.with_suffix(".json").read_text())
        assert side["method"] == "DELTA" and side["delta"] == -0.5 and side["M"] == 3
        back = read_stacked_csv(path)
        assert back.M == 3 and back.method == mi.method
        assert all(x.equals(y) for x, y in zip(back.datasets, mi.datasets))
        assert back.provenance == mi.provenance
        stacked = mi.stacked()
        assert list(stacked.columns[:2]) == [".imp", ".id"] and len(stacked) == 3 * gap_store.dataset.n

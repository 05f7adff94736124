import numpy as np
import pytest

from ordmi.data import VariableMeta, WideDataset
from ordmi.errors import DataError, FormulaError
from ordmi.models import ModelSpec, build_sequence, encode_design, list_models, parse_formula

from helpers import make_wide, schizow_like

MAIN = "y6 ~ tx + y0 + y1 + y2 + y3 + y4 + y5"

# expected listings keep the trailing padding of the formula column
DEFAULT_LISTING = """\
Order   model_formula                        
  1     y0 ~ tx                              
  2     y1 ~ tx + y0                         
  3     y3 ~ tx + y0 + y1                    
  4     y2 ~ tx + y0 + y1 + y3               
  5     y4 ~ tx + y0 + y1 + y2 + y3          
  6     y5 ~ tx + y0 + y1 + y2 + y3 + y4     
  7     y6 ~ tx + y0 + y1 + y2 + y3 + y4 + y5
"""

TIME_ORDER_LISTING = """\
Order   model_formula                        
  1     y0 ~ tx                              
  2     y1 ~ tx + y0                         
  3     y2 ~ tx + y0 + y1                    
  4     y3 ~ tx + y0 + y1 + y2               
  5     y4 ~ tx + y0 + y1 + y2 + y3          
  6     y5 ~ tx + y0 + y1 + y2 + y3 + y4     
  7     y6 ~ tx + y0 + y1 + y2 + y3 + y4 + y5
"""


class TestParseFormula:
    def test_basic(self):
        f = parse_formula("y6 ~ tx + y0 + y1")
        assert (f.response, f.predictors) == ("y6", ("tx", "y0", "y1"))
        assert str(f) == "y6 ~ tx + y0 + y1"

    def test_whitespace_trimmed(self):
        assert parse_formula("  y6~tx+  y0 ").predictors == ("tx", "y0")

    def test_missing_rhs(self):
        with pytest.raises(FormulaError) as exc:
            parse_formula("y6 ~")
        assert exc.value.position == 4

    def test_duplicate_predictor(self):
        with pytest.raises(FormulaError, match="duplicate") as exc:
            parse_formula("y6 ~ tx + tx")
        assert exc.value.position == 10

    @pytest.mark.parametrize("src", ["", "y6", "y6 ~ a ~ b", "~ tx", "y6 ~ tx + ", "y6 ~ tx*y0", "y6 ~ log(y0)"])
    def test_rejects(self, src):
        with pytest.raises(FormulaError):
            parse_formula(src)

    def test_response_not_a_predictor(self):
        with pytest.raises(FormulaError):
            parse_formula("y1 ~ tx + y1")

    def test_intercept_only(self):
        f = parse_formula("y1 ~ 1")
        assert f.predictors == () and str(f) == "y1 ~ 1"


class TestBuildSequence:
    def test_default_order_listing(self):
        seq = build_sequence(parse_formula(MAIN), schizow_like())
        assert list_models(seq) == DEFAULT_LISTING
        assert str(seq.models[-1]) == MAIN

    def test_time_order_listing(self):
        seq = build_sequence(parse_formula(MAIN), schizow_like(), order=[f"y{j}" for j in range(6)])
        assert list_models(seq) == TIME_ORDER_LISTING
        assert str(seq.models[3]) == "y3 ~ tx + y0 + y1 + y2"
        assert list_models(seq).splitlines()[3].split(maxsplit=1)[1].strip() == "y2 ~ tx + y0 + y1"

    def test_listing_has_seven_lines_starting_with_baseline(self):
        lines = list_models(build_sequence(parse_formula(MAIN), schizow_like())).splitlines()
        assert len(lines) == 8
        assert lines[1].split(maxsplit=1)[1].strip() == "y0 ~ tx"

    def test_complete_predictors(self):
        ds = make_wide([("a", 1, 1, 2, None), ("b", 0, 2, 3, 1)])
        seq = build_sequence(parse_formula("y2 ~ tx + y0 + y1"), ds)
        assert seq.imputation_models == ()
        assert list_models(seq).splitlines()[1].split(maxsplit=1)[1].strip() == "y2 ~ tx + y0 + y1"

    def test_order_must_be_permutation(self):
        with pytest.raises(FormulaError, match="permutation"):
            build_sequence(parse_formula(MAIN), schizow_like(), order=["y0", "y1"])
        with pytest.raises(FormulaError):
            build_sequence(parse_formula(MAIN), schizow_like(), order=["y0", "y0", "y1", "y2", "y3", "y4"])

    def test_factorization_structure(self):
        seq = build_sequence(parse_formula(MAIN), schizow_like())
        seen = {"tx"}
        for m in seq.models:
            assert set(m.predictors) <= seen
            seen.add(m.target)

    def test_target_without_predecessors(self):
        ds = make_wide([("a", 1, None, 2), ("b", 0, 2, 3)])
        seq = build_sequence(parse_formula("y1 ~ y0"), ds)
        assert seq.imputation_models[0].predictors == ()

    def test_all_missing_column(self):
        ds = make_wide([("a", 1, None, 2), ("b", 0, None, 3)])
        with pytest.raises(DataError, match="entirely missing"):
            build_sequence(parse_formula("y1 ~ tx + y0"), ds)

    def test_unknown_column_named(self):
        with pytest.raises(FormulaError, match="'y9'"):
            build_sequence(parse_formula("y6 ~ tx + y9"), schizow_like())

    def test_kinds(self):
        seq = build_sequence(parse_formula(MAIN), schizow_like())
        assert all(m.model_kind == "cumulative_logit" and m.link == "logit" for m in seq.models)


class TestModelSpec:
    def test_table_grid(self):
        ModelSpec("b", ("tx",), "binomial", "cloglog", "glm_binomial")
        ModelSpec("c", ("tx",), "gaussian", "identity", "lm")
        with pytest.raises(FormulaError):
            ModelSpec("b", ("tx",), "binomial", "identity", "glm_binomial")
        with pytest.raises(FormulaError, match="not supported"):
            ModelSpec("c", ("tx",), "gaussian", "log", "lm")
        with pytest.raises(FormulaError):
            ModelSpec("c", ("tx",), "poisson", "log", "lm")
        with pytest.raises(FormulaError):
            ModelSpec("o", ("tx",), "binomial", "probit", "cumulative_logit")


def _cov_ds():
    import pandas as pd
    from ordmi.simulate import ordinal_schema

    meta = ordinal_schema(["y0", "y1"], 4, covariates={"age": ("continuous", None), "site": ("categorical", 3)})
    frame = pd.DataFrame({"id": ["a", "b", "c"], "tx": [1.0, 0.0, 1.0], "age": [30.5, 41.0, 50.0],
                          "site": [1.0, 3.0, 2.0], "y0": [3.0, 1.0, 4.0], "y1": [2.0, np.nan, 1.0]})
    return WideDataset(frame, meta)


class TestEncodeDesign:
    spec = ModelSpec("y1", ("tx", "age", "site", "y0"), "binomial", "logit", "cumulative_logit")

    def test_dummy_mode(self):
        X, y, names = encode_design(_cov_ds(), self.spec, ord_cov_dummy=True)
        assert names == ["(Intercept)", "tx", "age", "site[2]", "site[3]", "y0[2]", "y0[3]", "y0[4]"]
        np.testing.assert_array_equal(X[0], [1, 1, 30.5, 0, 0, 0, 1, 0])
        np.testing.assert_array_equal(X[1, -3:], [0, 0, 0])
        assert set(X[:, -3:].sum(axis=1)) <= {0.0, 1.0}
        assert np.isnan(y[1])

    def test_numeric_mode(self):
        X, _, names = encode_design(_cov_ds(), self.spec)
        assert names == ["(Intercept)", "tx", "age", "site[2]", "site[3]", "y0"]
        assert X[0, -1] == 3.0
        assert set(X[:, 1]) == {0.0, 1.0}

    def test_reference_level(self):
        spec = ModelSpec("y1", ("tx", "y0"), "binomial", "logit", "cumulative_logit")
        _, _, names = encode_design(_cov_ds(), spec, ord_cov_dummy=True, ref_level=4)
        assert names[-3:] == ["y0[1]", "y0[2]", "y0[3]"]

    def test_missing_predictor_rejected(self):
        spec = ModelSpec("y0", ("y1",), "binomial", "logit", "cumulative_logit")
        with pytest.raises(DataError, match="missing"):
            encode_design(_cov_ds(), spec)
        X, _, _ = encode_design(_cov_ds(), spec, rows=[0, 2])
        assert X.shape == (2, 2)

    def test_unknown_level(self):
        ds = _cov_ds()
        ds.frame.loc[0, "site"] = 7.0
        with pytest.raises(DataError, match="unknown level"):
            encode_design(ds, self.spec)


def test_binary_outcome_sequence():
    meta = [VariableMeta("id", role="id"), VariableMeta("tx", "binary", "treatment"),
            VariableMeta("b0", "binary", "outcome", visit=0), VariableMeta("b1", "binary", "outcome", visit=1)]
    import pandas as pd

    frame = pd.DataFrame({"id": list("abcd"), "tx": [0.0, 1, 0, 1], "b0": [0.0, np.nan, 1, 1], "b1": [1.0, 0, 1, 0]})
    ds = WideDataset(frame, meta)
    seq = build_sequence(parse_formula("b1 ~ tx + b0"), ds, links={"b0": "probit"})
    assert seq.imputation_models[0].model_kind == "glm_binomial"
    assert seq.imputation_models[0].link == "probit"
    assert seq.analysis_model.link == "logit"

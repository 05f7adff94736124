"""Controlled multiple imputation for longitudinal ordinal and binary outcomes.

Typical workflow::

    ds = load_wide_csv("trial.csv", schema)
    seq = build_sequence(parse_formula("y6 ~ tx + y0 + y1 + y3"), ds)
    store = run_gibbs_da(seq, ds, config=ChainConfig(n_iter=2000, seed=7))
    mi = extract_MIdata(store, "J2R", M=100, minspace=5)
    table = analyze_miset(mi)
"""
from .analysis import (
    FitResult,
    PooledResult,
    TippingResult,
    analyze_miset,
    fit_cumulative_logit,
    fit_glm_binomial,
    format_table,
    rubin_pool,
    tipping_point,
)
from .controlled import (
    MIMethod,
    MISet,
    extract_MIdata,
    impute_cr,
    impute_delta,
    impute_j2r,
    impute_mar,
    read_stacked_csv,
    select_draws,
)
from .data import (
    MISSING,
    MissingPattern,
    VariableMeta,
    WideDataset,
    default_model_order,
    drop_no_followup,
    load_wide_csv,
    long_to_wide,
    missing_pattern,
    pattern_report,
    wide_to_long,
)
from .diagnostics import autocorr, chain_summary, effective_size, gelman_rubin
from .errors import (
    ConfigError,
    DataError,
    FormulaError,
    InsufficientDrawsError,
    NumericalError,
    OrdmiError,
    SchemaError,
)
from .likelihood import CutPoints, category_probs, cumulative_probs, from_unconstrained, to_unconstrained
from .models import Formula, ModelSpec, SequenceSpec, build_sequence, list_models, parse_formula
from .sampler import (
    ChainConfig,
    DrawStore,
    ModelParams,
    PriorSpec,
    SequenceModel,
    impute_missing_mar,
    linear_predictor,
    run_gibbs_da,
    run_mda,
    run_sampler,
    update_params,
)
from .store import load_store, save_store

__version__ = "0.1.0"

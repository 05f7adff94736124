"""Command-line workflow: inspect, run, extract, analyze, tippingpoint.

Options come from a TOML file (``--config``) and are overridden by flags.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure (including ``--strict-convergence`` with an R-hat above 1.2).
"""
from __future__ import annotations

import argparse
import copy
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import data as dcore
from .errors import ConfigError, DataError, FormulaError, InsufficientDrawsError, NumericalError, SchemaError

__all__ = ["main", "RunConfig", "DEFAULTS"]

THREADS_ENV = "ORDMI_THREADS"
RHAT_LIMIT = 1.2

DEFAULTS = {
    "data": {
        "path": None,
        "format": "wide",
        "id": "id",
        "treatment": "tx",
        "outcomes": [],
        "outcome_kind": "ordinal",
        "levels": None,
        "covariates": {},
        "time": "time",
        "value": "value",
        "prefix": "y",
        "times": [],
        "drop_empty": False,
    },
    "model": {"formula": None, "order": [], "ord_cov_dummy": False, "ref_level": 1, "links": {}},
    "sampler": {"algorithm": "gibbs_da", "n_chains": 2, "n_iter": 1000, "n_adapt": 1000, "thin": 1, "seed": 1},
    "priors": {"coef_var": 100.0, "cut_var": 100.0, "ig_shape": 0.01, "ig_rate": 0.01},
    "extract": {"method": "MAR", "delta": None, "M": 100, "minspace": 5, "mc_size": 10000, "seed": None},
    "analysis": {"by_visit": True, "adjust": [], "level": 0.95, "barnard_rubin": False},
    "tipping": {"grid": [], "threshold": 0.05, "visit": None},
    "output": {"dir": "ordmi-out"},
}

log = logging.getLogger("ordmi")


class RunConfig:
    """Sectioned run settings with defaults; round-trips through TOML.

    Relative paths are resolved against ``base`` (the config file's folder).
    """

    def __init__(self, values: dict | None = None, base: Path | None = None):
        self.values = copy.deepcopy(DEFAULTS)
        self.base = Path(base) if base is not None else Path.cwd()
        for section, body in (values or {}).items():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            if not isinstance(body, dict):
                raise ConfigError(f"[{section}] must be a table")
            for key, val in body.items():
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                self.values[section][key] = val
        self.validate()

    def __getitem__(self, section):
        return self.values[section]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def set(self, section, key, value):
        if value is not None:
            self.values[section][key] = value

    def validate(self):
        m = self.values["extract"]
        if str(m["method"]).upper() == "DELTA" and m["delta"] is None:
            raise ConfigError("method DELTA requires delta")
        if self.values["sampler"]["algorithm"] not in ("gibbs_da", "mda"):
            raise ConfigError(f"algorithm must be gibbs_da or mda, got {self.values['sampler']['algorithm']!r}")

    @classmethod
    def from_toml(cls, text: str, base=None) -> "RunConfig":
        try:
            return cls(tomllib.loads(text), base)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        return cls.from_toml(path.read_text(), path.parent)

    def to_toml(self) -> str:
        # TOML has no null: unset options are omitted and restored from defaults
        clean = {s: {k: v for k, v in body.items() if v is not None} for s, body in self.values.items()}
        return tomli_w.dumps(clean)

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p


# -- building blocks ------------------------------------------------------


def _schema(cfg: RunConfig):
    d = cfg["data"]
    levels = d["levels"]
    meta = [dcore.VariableMeta(d["id"], role="id"), dcore.VariableMeta(d["treatment"], "binary", "treatment")]
    for name, spec in d["covariates"].items():
        spec = {"kind": spec} if isinstance(spec, str) else dict(spec)
        meta.append(dcore.VariableMeta(name, spec.get("kind", "continuous"), "covariate", spec.get("levels")))
    for j, name in enumerate(d["outcomes"]):
        meta.append(dcore.VariableMeta(name, d["outcome_kind"], "outcome", levels, visit=j))
    return meta


def load_dataset(cfg: RunConfig):
    d = cfg["data"]
    if d["path"] is None:
        raise ConfigError("[data] path is required")
    path = cfg.path(d["path"])
    if not path.exists():
        raise ConfigError(f"data file {path} does not exist")
    if d["format"] == "wide":
        if not d["outcomes"]:
            raise ConfigError("[data] outcomes must list the outcome columns")
        ds = dcore.load_wide_csv(path, _schema(cfg))
    elif d["format"] == "long":
        frame = pd.read_csv(path, keep_default_na=True, na_values=["NA"], dtype={d["id"]: str})
        covs = {}
        for name, spec in d["covariates"].items():
            spec = {"kind": spec} if isinstance(spec, str) else dict(spec)
            covs[name] = (spec.get("kind", "continuous"), spec.get("levels"))
        ds = dcore.long_to_wide(frame, d["id"], d["time"], d["value"], d["prefix"], treatment=d["treatment"],
                                covariates=covs or None, kind=d["outcome_kind"], levels=d["levels"],
                                times=d["times"] or None)
    else:
        raise ConfigError(f"[data] format must be wide or long, got {d['format']!r}")
    if d["drop_empty"]:
        ds = dcore.drop_no_followup(ds)
    return ds


def build(cfg: RunConfig, ds):
    from .models import build_sequence, parse_formula

    m = cfg["model"]
    if not m["formula"]:
        raise ConfigError("[model] formula is required")
    return build_sequence(parse_formula(m["formula"]), ds, order=m["order"] or None,
                          ord_cov_dummy=m["ord_cov_dummy"], links=m["links"] or None, ref_level=m["ref_level"])


def _threads(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def _setup_log(outdir: Path):
    outdir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(outdir / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    for old in log.handlers:
        old.close()
    log.handlers[:] = [handler]
    log.setLevel(logging.INFO)
    log.propagate = False


def _outdir(cfg: RunConfig, args) -> Path:
    return Path(args.out) if getattr(args, "out", None) else cfg.path(cfg["output"]["dir"])


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {
        ("data", "path"): getattr(args, "data", None),
        ("data", "drop_empty"): True if getattr(args, "drop_empty", False) else None,
        ("model", "formula"): getattr(args, "formula", None),
        ("sampler", "algorithm"): getattr(args, "algorithm", None),
        ("sampler", "n_chains"): getattr(args, "n_chains", None),
        ("sampler", "n_iter"): getattr(args, "n_iter", None),
        ("sampler", "n_adapt"): getattr(args, "n_adapt", None),
        ("sampler", "thin"): getattr(args, "thin", None),
        ("sampler", "seed"): getattr(args, "seed", None) if args.command == "run" else None,
        ("extract", "method"): getattr(args, "method", None),
        ("extract", "delta"): getattr(args, "delta", None),
        ("extract", "M"): getattr(args, "M", None),
        ("extract", "minspace"): getattr(args, "minspace", None),
        ("extract", "mc_size"): getattr(args, "mc_size", None),
        ("extract", "seed"): getattr(args, "seed", None) if args.command in ("extract", "tippingpoint") else None,
        ("analysis", "level"): getattr(args, "level", None),
        ("analysis", "barnard_rubin"): True if getattr(args, "barnard_rubin", False) else None,
        ("tipping", "threshold"): getattr(args, "threshold", None),
        ("tipping", "visit"): getattr(args, "visit", None),
    }
    for (section, key), value in overrides.items():
        cfg.set(section, key, value)
    if getattr(args, "order", None):
        cfg.set("model", "order", [s.strip() for s in args.order.split(",")])
    if getattr(args, "adjust", None):
        cfg.set("analysis", "adjust", [s.strip() for s in args.adjust.split(",")])
    if getattr(args, "grid", None):
        try:
            cfg.set("tipping", "grid", [float(s) for s in args.grid.split(",")])
        except ValueError:
            raise ConfigError(f"--grid must be comma-separated numbers, got {args.grid!r}") from None
    cfg.validate()
    return cfg


def _store_path(cfg, args) -> Path:
    return Path(args.store) if getattr(args, "store", None) else _outdir(cfg, args) / "store"


# -- subcommands ------------------------------------------------------------


def cmd_inspect(args) -> int:
    from .models import list_models

    cfg = _config(args)
    ds = load_dataset(cfg)
    mp = dcore.missing_pattern(ds)
    if not any(mp.counts.values()):
        print("no missing values")
    else:
        print(dcore.pattern_report(mp), end="")
    print()
    print(list_models(build(cfg, ds)), end="")
    return 0


def cmd_run(args) -> int:
    from .diagnostics import chain_summary
    from .plotting import trace_svg
    from .sampler import ChainConfig, PriorSpec, run_sampler
    from .store import save_store

    cfg = _config(args)
    out = _outdir(cfg, args)
    _setup_log(out)
    ds = load_dataset(cfg)
    seq = build(cfg, ds)
    s = cfg["sampler"]
    config = ChainConfig(n_chains=s["n_chains"], n_iter=s["n_iter"], n_adapt=s["n_adapt"], thin=s["thin"],
                         seed=s["seed"], threads=_threads(args.threads))
    priors = PriorSpec(**cfg["priors"])
    log.info("run: %s, %d chains, n_adapt=%d, n_iter=%d, thin=%d, seed=%d", s["algorithm"], config.n_chains,
             config.n_adapt, config.n_iter, config.thin, config.seed)
    store = run_sampler(seq, ds, priors, config, s["algorithm"])
    save_store(store, out / "store")
    (out / "config.toml").write_text(cfg.to_toml())
    diag = out / "diagnostics"
    diag.mkdir(exist_ok=True)
    summary = chain_summary(store)
    summary.to_csv(diag / "summary.csv", index=False, float_format="%.6g")
    for name in store.treatment_params():
        series = store.param_series(name)
        if series.shape[1] > 1:
            (diag / f"trace_{name.replace(':', '_')}.svg").write_text(trace_svg(series, name))
    log.info("retained %d draws; nonfinite proposals %s", store.total_retained, store.nonfinite)
    print(f"retained {store.total_retained} draws in {out / 'store'}")
    if args.strict_convergence and store.n_chains > 1:
        bad = summary[summary["rhat"] > RHAT_LIMIT]
        if len(bad):
            msg = ", ".join(f"{r.param} ({r.rhat:.3f})" for r in bad.itertuples())
            log.error("R-hat above %.1f: %s", RHAT_LIMIT, msg)
            print(f"error: R-hat above {RHAT_LIMIT}: {msg}", file=sys.stderr)
            return 4
    return 0


def cmd_extract(args) -> int:
    from .controlled import extract_MIdata
    from .store import load_store

    cfg = _config(args)
    out = _outdir(cfg, args)
    _setup_log(out)
    store = load_store(_store_path(cfg, args))
    e = cfg["extract"]
    setting = {"mc_size": e["mc_size"]}
    if e["seed"] is not None:
        setting["seed"] = e["seed"]
    mi = extract_MIdata(store, e["method"], M=e["M"], minspace=e["minspace"], mi_setting=setting, delta=e["delta"])
    target = Path(args.output) if args.output else out / "midata" / f"{_label(mi.method)}.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    mi.to_csv(target)
    log.info("extract: %s, M=%d -> %s", mi.method, mi.M, target)
    print(f"wrote {mi.M} imputed datasets to {target}")
    return 0


def _label(method) -> str:
    return f"DELTA_{method.delta:g}" if method.tag == "DELTA" and not isinstance(method.delta, dict) else method.tag


def cmd_analyze(args) -> int:
    from .analysis import analyze_miset, format_table
    from .controlled import read_stacked_csv

    cfg = _config(args)
    out = _outdir(cfg, args)
    _setup_log(out)
    frames = {}
    for path in args.miset:
        mi = read_stacked_csv(path)
        a = cfg["analysis"]
        frames[Path(path).stem] = analyze_miset(mi, by_visit=a["by_visit"], adjust=tuple(a["adjust"]),
                                               level=a["level"], barnard_rubin=a["barnard_rubin"])
    dest = out / "analysis"
    dest.mkdir(parents=True, exist_ok=True)
    combined = pd.concat([f.assign(method=k) for k, f in frames.items()], ignore_index=True)
    combined.to_csv(dest / "pooled.csv", index=False, float_format="%.6g")
    table = format_table(frames)
    (dest / "pooled.txt").write_text(table)
    log.info("analyze: %s", ", ".join(frames))
    print(table, end="")
    return 0


def cmd_tippingpoint(args) -> int:
    from .analysis import tipping_point
    from .plotting import tipping_svg
    from .store import load_store

    cfg = _config(args)
    out = _outdir(cfg, args)
    _setup_log(out)
    t, e = cfg["tipping"], cfg["extract"]
    if not t["grid"]:
        raise ConfigError("tipping-point analysis needs a delta grid (--grid)")
    store = load_store(_store_path(cfg, args))
    setting = {"mc_size": e["mc_size"]}
    if e["seed"] is not None:
        setting["seed"] = e["seed"]
    res = tipping_point(store, t["grid"], M=e["M"], minspace=e["minspace"], visit=t["visit"],
                        threshold=t["threshold"], level=cfg["analysis"]["level"],
                        adjust=tuple(cfg["analysis"]["adjust"]), mi_setting=setting)
    dest = out / "analysis"
    dest.mkdir(parents=True, exist_ok=True)
    res.table.to_csv(dest / "tipping.csv", index=False, float_format="%.6g")
    (dest / "tipping.svg").write_text(tipping_svg(res.table["delta"], res.table["p_value"], t["threshold"],
                                                  res.crossing))
    log.info("tippingpoint: %s", res.message)
    print(res.table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(res.message)
    return 0


# -- entry point --------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ordmi", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--out", help="output directory (overrides [output] dir)")
        if data:
            sp.add_argument("--data", help="data CSV (overrides [data] path)")
            sp.add_argument("--formula", help="analysis formula, e.g. 'y6 ~ y0 + y1 + y3 + tx'")
            sp.add_argument("--order", help="comma-separated model order")
            sp.add_argument("--drop-empty", action="store_true", help="exclude subjects without post-baseline data")

    def extraction(sp):
        sp.add_argument("--store", help="draw-store bundle (default <out>/store)")
        sp.add_argument("--M", type=int)
        sp.add_argument("--minspace", type=int)
        sp.add_argument("--mc-size", type=int)
        sp.add_argument("--seed", type=int, help="override the sampler seed for imputation")

    sp = sub.add_parser("inspect", help="missingness report and model list")
    common(sp)
    sp.set_defaults(func=cmd_inspect)

    sp = sub.add_parser("run", help="sample the imputation models")
    common(sp)
    sp.add_argument("--algorithm", choices=["gibbs_da", "mda"])
    sp.add_argument("--n-chains", type=int)
    sp.add_argument("--n-iter", type=int)
    sp.add_argument("--n-adapt", type=int)
    sp.add_argument("--thin", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int, help=f"worker cap (default ${THREADS_ENV} or 1)")
    sp.add_argument("--strict-convergence", action="store_true", help=f"exit 4 if any R-hat > {RHAT_LIMIT}")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("extract", help="write imputed datasets")
    common(sp, data=False)
    extraction(sp)
    sp.add_argument("--method", type=str.upper, choices=["MAR", "DELTA", "CR", "J2R"])
    sp.add_argument("--delta", type=float)
    sp.add_argument("--output", help="stacked CSV path (default <out>/midata/<method>.csv)")
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("analyze", help="per-visit fits pooled by Rubin's rules")
    common(sp, data=False)
    sp.add_argument("miset", nargs="+", help="stacked CSV(s) written by extract")
    sp.add_argument("--adjust", help="comma-separated baseline covariates")
    sp.add_argument("--level", type=float)
    sp.add_argument("--barnard-rubin", action="store_true")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("tippingpoint", help="delta sweep for the tipping point")
    common(sp, data=False)
    extraction(sp)
    sp.add_argument("--grid", help="comma-separated ascending delta values; write --grid=-2,-1,0 when the first is negative")
    sp.add_argument("--visit", help="outcome column to test (default last visit)")
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--adjust", help="comma-separated baseline covariates")
    sp.add_argument("--level", type=float)
    sp.set_defaults(func=cmd_tippingpoint)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormulaError, InsufficientDrawsError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, SchemaError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

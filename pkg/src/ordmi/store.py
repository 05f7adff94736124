"""Versioned on-disk bundle for a :class:`DrawStore`.

A bundle is a directory holding

``draws.npz``     parameter draws, completed target matrices and iteration numbers per chain
``params.csv``    the same parameter draws in long format (chain, iter, model, param, value)
``data.csv``      the observed wide dataset
``meta.json``     schema, model sequence, priors, chain settings and format version

Every file is byte-stable for identical content (zip timestamps are fixed).
"""
from __future__ import annotations

import dataclasses
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .data import VariableMeta, load_wide_csv
from .errors import ConfigError
from .models import build_sequence, parse_formula
from .sampler import ChainConfig, DrawStore, PriorSpec, SequenceModel

__all__ = ["FORMAT_VERSION", "save_store", "load_store", "params_long_csv"]

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_npz(path: Path, arrays: dict) -> None:
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def params_long_csv(store: DrawStore) -> str:
    """Long-format parameter table; chains and iterations are 1-based."""
    lines = ["chain,iter,model,param,value"]
    split = [nm.split(":", 1) for nm in store.param_names]
    for c, (p, its) in enumerate(zip(store.params, store.iterations), start=1):
        for row, it in zip(p, its):
            lines.extend(f"{c},{it},{m},{q},{v!r}" for (m, q), v in zip(split, row.tolist()))
    return "\n".join(lines) + "\n"


def _sequence_meta(store: DrawStore) -> dict:
    seq = store.sequence
    links = {m.target: m.link for m in seq.models if m.model_kind == "glm_binomial"}
    return {
        "formula": str(seq.analysis_model),
        "order": [m.target for m in seq.imputation_models],
        "ord_cov_dummy": seq.ord_cov_dummy,
        "ref_level": seq.ref_level,
        "links": links,
        "models": [str(m) for m in seq.models],
    }


def save_store(store: DrawStore, directory) -> Path:
    """Write ``store`` as a bundle under ``directory`` (created if needed)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for c in range(store.n_chains):
        arrays[f"params_{c}"] = store.params[c]
        arrays[f"completed_{c}"] = store.completed[c]
        arrays[f"iterations_{c}"] = store.iterations[c]
    _write_npz(out / "draws.npz", arrays)
    (out / "params.csv").write_text(params_long_csv(store))
    store.dataset.to_csv(out / "data.csv")
    config = dataclasses.asdict(store.config)
    config["inits"] = "random" if store.config.inits == "random" else "user"
    # the worker count does not change the draws
    config.pop("threads")
    meta = {
        "format": "ordmi-drawstore",
        "version": FORMAT_VERSION,
        "algorithm": store.algorithm,
        "spec_hash": store.spec_hash,
        "param_names": store.param_names,
        "targets": store.targets,
        "n_chains": store.n_chains,
        "schema": [dataclasses.asdict(m) for m in store.dataset.meta],
        "sequence": _sequence_meta(store),
        "priors": dataclasses.asdict(store.priors),
        "config": config,
        "acceptance": store.acceptance,
        "nonfinite": [int(v) for v in store.nonfinite],
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def load_store(directory) -> DrawStore:
    """Read a bundle written by :func:`save_store`."""
    src = Path(directory)
    if not (src / "meta.json").exists():
        raise ConfigError(f"{src}: not a draw-store bundle (meta.json missing)")
    meta = json.loads((src / "meta.json").read_text())
    if meta.get("format") != "ordmi-drawstore":
        raise ConfigError(f"{src}: unrecognised bundle format")
    if meta["version"] > FORMAT_VERSION:
        raise ConfigError(f"{src}: bundle version {meta['version']} is newer than supported {FORMAT_VERSION}")
    schema = [VariableMeta(**m) for m in meta["schema"]]
    ds = load_wide_csv(src / "data.csv", schema)
    sm = meta["sequence"]
    seq = build_sequence(parse_formula(sm["formula"]), ds, order=sm["order"], ord_cov_dummy=sm["ord_cov_dummy"],
                         links=sm["links"], ref_level=sm["ref_level"])
    model = SequenceModel(seq, ds)
    if model.param_names != meta["param_names"]:
        raise ConfigError(f"{src}: rebuilt model does not match stored parameter names")
    cfg = dict(meta["config"])
    cfg["inits"] = "random"
    with np.load(src / "draws.npz", allow_pickle=False) as z:
        n = meta["n_chains"]
        params = [z[f"params_{c}"] for c in range(n)]
        completed = [z[f"completed_{c}"] for c in range(n)]
        iterations = [z[f"iterations_{c}"] for c in range(n)]
    return DrawStore(
        param_names=meta["param_names"],
        targets=meta["targets"],
        params=params,
        completed=completed,
        iterations=iterations,
        sequence=seq,
        dataset=ds,
        config=ChainConfig(**cfg),
        priors=PriorSpec(**meta["priors"]),
        algorithm=meta["algorithm"],
        spec_hash=meta["spec_hash"],
        acceptance=meta["acceptance"],
        nonfinite=meta["nonfinite"],
        _model=model,
    )

"""Deterministic SVG rendering (pattern grid, traces, tipping-point curve)."""
from __future__ import annotations

import io

import numpy as np

OBSERVED_COLOR = "#1f4e9c"
MISSING_COLOR = "#c0392b"


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    # fixed hash salt keeps SVG element ids stable between runs
    matplotlib.rcParams["svg.hashsalt"] = "ordmi"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def _to_svg(fig) -> str:
    plt = _pyplot()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def pattern_svg(mp) -> str:
    plt = _pyplot()
    from matplotlib.colors import ListedColormap

    grid = np.array([p for p, _ in mp.patterns], dtype=float)
    counts = [c for _, c in mp.patterns]
    nrow, ncol = grid.shape
    fig, ax = plt.subplots(figsize=(1 + 0.5 * ncol, 1 + 0.3 * nrow))
    # vector cells so the SVG stays a plain grid of filled paths
    ax.pcolormesh(grid, cmap=ListedColormap([MISSING_COLOR, OBSERVED_COLOR]), vmin=0, vmax=1,
                  edgecolors="white", linewidth=1)
    ax.invert_yaxis()
    ax.set_xticks(np.arange(ncol) + 0.5, labels=list(mp.variables))
    ax.set_yticks(np.arange(nrow) + 0.5, labels=[str(c) for c in counts])
    ax.set_ylabel("subjects")
    ax.set_title("Missingness patterns (blue = observed, red = missing)")
    fig.tight_layout()
    return _to_svg(fig)


def trace_svg(chains, name: str, max_lag: int = 40) -> str:
    """Trace, density and ACF panels for one parameter; ``chains`` is (m, n)."""
    from .diagnostics import autocorr

    plt = _pyplot()
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    fig, axes = plt.subplots(1, 3, figsize=(11, 2.8))
    for c, series in enumerate(chains):
        axes[0].plot(series, lw=0.5, label=f"chain {c + 1}")
        if np.ptp(series) > 0:
            axes[1].hist(series, bins=40, density=True, histtype="step")
            acf = autocorr(series, min(max_lag, len(series) - 1))
            axes[2].vlines(np.arange(len(acf)) + 0.15 * c, 0, acf, lw=1.2)
    axes[0].set_title(f"trace: {name}")
    axes[1].set_title("density")
    axes[2].set_title("ACF")
    axes[2].axhline(0, color="k", lw=0.5)
    fig.tight_layout()
    return _to_svg(fig)


def tipping_svg(deltas, pvalues, threshold: float = 0.05, crossing=None) -> str:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(deltas, pvalues, marker="o")
    ax.axhline(threshold, color=MISSING_COLOR, ls="--", lw=1)
    if crossing is not None:
        ax.axvline(crossing, color="grey", ls=":", lw=1)
    ax.set_xlabel("delta")
    ax.set_ylabel("p-value")
    ax.set_title("Tipping-point analysis")
    fig.tight_layout()
    return _to_svg(fig)

"""Deterministic SVG line charts and histograms of logged traces."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigError  # noqa: E402

_RC = {"svg.hashsalt": "recbf-kit", "svg.fonttype": "none", "path.simplify": False}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _column(trace, name):
    if name not in trace.columns:
        raise ConfigError(f"trace has no column {name!r}")
    return trace[name]


def plot_series(series, path, xlabel: str = "t_s", ylabel: str = "", hline: float | None = None,
                hline_label: str = "limit") -> Path:
    """Line chart of ``(x, y, label)`` series with an optional horizontal rule."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        for x, y, lab in series:
            ax.plot(x, y, label=lab, lw=1.2)
        if hline is not None:
            ax.axhline(hline, color="k", ls="--", lw=0.8, label=hline_label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3)
        if len(series) > 1 or hline is not None:
            ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        return _save(fig, path)


def plot_traces(traces, labels, y: str, path, x: str = "t_s", hline: float | None = None,
                hline_label: str = "limit") -> Path:
    """Overlay one column of several traces (e.g. Y against the Ymax rule)."""
    if len(traces) != len(labels):
        raise ConfigError("need one label per trace")
    if len({tuple(tr.columns) for tr in traces}) > 1:
        raise ConfigError("traces have mismatched columns")
    series = [(_column(tr, x), _column(tr, y), lab) for tr, lab in zip(traces, labels)]
    return plot_series(series, path, x, y, hline, hline_label)


def plot_columns(trace, ys, path, x: str = "t_s", ylabel: str = "") -> Path:
    series = [(_column(trace, x), _column(trace, y), y) for y in ys]
    return plot_series(series, path, x, ylabel)


def plot_histogram(hist, path, xlabel: str = "value") -> Path:
    """Bar chart of a Histogram with its moment-matched normal density."""
    widths = np.diff(hist.edges)
    total = hist.counts.sum()
    density = hist.counts / (total * widths) if total else hist.counts * 0.0
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        ax.bar(hist.edges[:-1], density, width=widths, align="edge", alpha=0.6, edgecolor="k", lw=0.4)
        if hist.sigma > 0:
            xs = np.linspace(hist.edges[0], hist.edges[-1], 200)
            ax.plot(xs, hist.pdf(xs), color="C3", lw=1.2,
                    label=f"N({hist.mu:.3g}, {hist.sigma:.3g}^2)")
            ax.legend(fontsize=8)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("density")
        fig.tight_layout()
        return _save(fig, path)

"""Optional PNG rendering of the CLI outputs.

Only imported when ``--plot`` is given, so the numerical core never needs a
display backend.  Every function takes the same rows that go into the CSV.
"""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)


def plot_moments(rows, path):
    """Partial sums ``gamma_m`` against the truncation order, one line per m."""
    series = defaultdict(list)
    for m, n, g in rows:
        series[m].append((n, g))
    fig, ax = plt.subplots(figsize=(6, 4))
    for m, pts in sorted(series.items()):
        ns, gs = zip(*pts)
        ax.plot(ns, gs, marker=".", label=f"m={m}")
    ax.set_xlabel("expansion order n")
    ax.set_ylabel("moment estimate")
    ax.legend(fontsize=7, ncol=2)
    _save(fig, path)


def plot_smile(rows, mc_rows, path):
    """Implied vols by cumulant order; MC vols as markers when available."""
    series = defaultdict(list)
    for ratio, _, order, _, vol in rows:
        series[order].append((ratio, vol))
    fig, ax = plt.subplots(figsize=(6, 4))
    for order, pts in sorted(series.items()):
        ks, vs = zip(*pts)
        ax.plot(ks, vs, label=f"order {order}")
    if mc_rows:
        ax.plot([r[0] for r in mc_rows], [r[4] for r in mc_rows], "k.", label="MC")
    ax.set_xlabel("K / S0")
    ax.set_ylabel("implied volatility")
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_residual_stats(rows, path):
    """Mean and stdev of the path-wise residual against the order."""
    ns = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(ns, [abs(r[1]) for r in rows], "o-", label="|mean|")
    ax.semilogy(ns, [r[2] for r in rows], "s-", label="stdev")
    ax.set_xlabel("expansion order n")
    ax.legend()
    _save(fig, path)


def plot_residual_scatter(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r[1] for r in rows], [r[2] for r in rows], ".", ms=2, alpha=0.4)
    ax.set_xlabel("expansion order n")
    ax.set_ylabel("residual")
    _save(fig, path)


def plot_utility_summary(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ns = [r[0] for r in rows]
    for j, name in enumerate(("V0", "Z0", "Gamma0"), start=1):
        ax.plot(ns, [r[j] for r in rows], "o-", label=name)
    ax.set_xlabel("expansion order n")
    ax.legend()
    _save(fig, path)

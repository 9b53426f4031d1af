"""Figures for sweep and estimate reports, written straight to files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "font.size": 10,
    "axes.labelsize": 11,
    "axes.titlesize": 11,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # keep output bytes stable between runs
    "svg.hashsalt": "iscount",
}

MARKERS = {"uniform": "o", "identity": "s", "isotonic": "^", "isotonic_star": "v"}


def plot_compare(summary, path, title=None):
    """Mean percent error against budget, one line per method, with
    standard-deviation bars."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        methods = list(dict.fromkeys(r["method"] for r in summary))
        for m in methods:
            rows = sorted((r for r in summary if r["method"] == m), key=lambda r: r["budget"])
            b = np.array([r["budget"] for r in rows])
            mu = np.array([r["mean_percent_error"] for r in rows])
            sd = np.array([r["std_percent_error"] for r in rows])
            ax.errorbar(b, mu, yerr=sd, marker=MARKERS.get(m, "o"), capsize=3, label=m)
        ax.set_xlabel("label budget n")
        ax.set_ylabel("percent error (%)")
        budgets = sorted({r["budget"] for r in summary})
        if len(budgets) > 1:
            ax.set_xscale("log")
            ax.minorticks_off()
        ax.set_xticks(budgets, [str(b) for b in budgets])
        if title:
            ax.set_title(title)
        ax.legend()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path


def plot_proposal(proposal, path, samples=None, title=None):
    """Heat map of a proposal density, optionally with sample locations."""
    g = proposal.grid
    extent = (g.xll, g.xmax, g.yll, g.ymax)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        d = np.where(proposal.mask.included, proposal.density, np.nan)
        im = ax.imshow(d, extent=extent, origin="upper", cmap="viridis")
        fig.colorbar(im, ax=ax, label="density (1/km$^2$)")
        if samples is not None:
            ax.scatter(samples.x, samples.y, s=4, c="w", edgecolors="k", linewidths=0.3)
        ax.set_xlabel("x (km)")
        ax.set_ylabel("y (km)")
        if title:
            ax.set_title(title)
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path

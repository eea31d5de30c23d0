"""SVG figures for step-scaling results.  CSV files are the contract; these are convenience output."""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (4.8, 3.4),
    "font.size": 9,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "svg.hashsalt": "nlsm-dtheory",
    "svg.fonttype": "none",
}


def step_scaling_figure(path, points, curves=(), title: str = "", config: dict | None = None):
    """Plot ``F`` against ``z`` with error bars.

    ``curves`` holds ``(label, zs, Fs)`` lines drawn under the points.  Points
    whose ``converged`` attribute is false are left out.
    """
    pts = [p for p in points if getattr(p, "converged", True)]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, zs, Fs in curves:
            ax.plot(zs, Fs, "-", lw=1.0, label=label)
        if pts:
            ax.errorbar([p.z for p in pts], [p.F for p in pts], xerr=[p.z_err for p in pts],
                        yerr=[p.F_err for p in pts], fmt="o", ms=3, capsize=2, label="lattice")
        ax.set_xlabel(r"$z = \bar g(L)$")
        ax.set_ylabel(r"$F_s(z)$")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        meta = {"Date": None}
        if config is not None:
            meta["Description"] = json.dumps(config, sort_keys=True)
        fig.savefig(path, format="svg", metadata=meta)
        plt.close(fig)

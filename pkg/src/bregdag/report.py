"""Figure rendering for fit and sweep outputs.

Uses the Agg backend unconditionally: every function here draws straight
to a file next to the delimited output it belongs to, no display server
involved.  Figures are a convenience view of the CSV/JSON artifacts, not
an extra data channel; everything plotted is recoverable from those files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_fit_traces(result: dict, path) -> None:
    """Two-panel convergence view of one fit.

    Left: objective and scaled squared residual per outer iteration
    (log scale).  Right: accepted step size, doubling after accepted
    steps and halving inside rejected ones.
    """
    traces = result["traces"]
    obj = np.asarray(traces["objective"], dtype=float)
    l2 = np.asarray(traces["l2"], dtype=float)
    gam = np.asarray(traces["gamma"], dtype=float)

    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9.0, 3.4))
    it = np.arange(obj.size)
    ax0.plot(it, np.maximum(obj, 1e-300), label="objective")
    ax0.plot(it, np.maximum(l2, 1e-300), label="residual")
    ax0.set_yscale("log")
    ax0.set_xlabel("outer iteration")
    ax0.legend(frameon=False)
    ax0.set_title("convergence")

    if gam.size:
        ax1.step(np.arange(1, gam.size + 1), gam, where="mid")
        ax1.set_yscale("log", base=2)
    ax1.set_xlabel("outer iteration")
    ax1.set_title("accepted step size")

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep_summary(rows: list[dict], path) -> None:
    """Mean SHD against sample count, one line per dataset family.

    ``rows`` are typed summary records (one per grid cell).  Cells whose
    every run failed carry ``None`` statistics and are skipped.
    """
    groups: dict[tuple, list[tuple[int, float]]] = {}
    for row in rows:
        if row["shd_mean"] is None:
            continue
        key = (row["n"], row["k"], row["model"], row["noise"])
        groups.setdefault(key, []).append((row["m"], row["shd_mean"]))

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for (n, k, model, noise), points in groups.items():
        points.sort()
        ms = [p[0] for p in points]
        shds = [p[1] for p in points]
        ax.plot(ms, shds, marker="o", label=f"{model}{k:g} n={n} {noise}")
    if groups:
        ax.set_xscale("log")
        ax.legend(frameon=False, fontsize=8)
    ax.set_xlabel("samples m")
    ax.set_ylabel("mean SHD")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

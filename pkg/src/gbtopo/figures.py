"""Matplotlib renderings written next to the delimited reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_curvature_figure(curv, path, truth: np.ndarray | None = None) -> None:
    """Histogram of the Gaussian curvature field, with the analytic values
    overlaid when ground truth is available."""
    k = curv.gaussian[np.isfinite(curv.gaussian)]
    lo, hi = np.percentile(k, [1, 99]) if k.size else (0.0, 1.0)
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    fig, axes = plt.subplots(1, 2 if curv.mean is not None else 1,
                             figsize=(9 if curv.mean is not None else 5, 3.2))
    ax0 = axes[0] if curv.mean is not None else axes
    bins = np.linspace(lo, hi, 80)
    ax0.hist(k, bins=bins, alpha=0.7, label="estimate")
    if truth is not None:
        ax0.hist(truth, bins=bins, histtype="step", color="k", label="analytic")
        ax0.legend(fontsize=8)
    ax0.set_xlabel("Gaussian curvature")
    ax0.set_ylabel("points")
    if curv.mean is not None:
        h = curv.mean[np.isfinite(curv.mean)]
        hlo, hhi = np.percentile(h, [1, 99]) if h.size else (0.0, 1.0)
        if hlo == hhi:
            hlo, hhi = hlo - 1.0, hhi + 1.0
        axes[1].hist(h, bins=np.linspace(hlo, hhi, 80), alpha=0.7, color="tab:orange")
        axes[1].set_xlabel("mean curvature")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_trace_figure(trace, path, chi_gt: float | None = None) -> None:
    """Euler estimate and loss against the optimization step."""
    steps = [s.step for s in trace.steps]
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax0.plot(steps, trace.eulers(), lw=1.5)
    if chi_gt is not None:
        ax0.axhline(chi_gt, color="k", ls="--", lw=0.8)
    else:
        for even in range(-6, 7, 2):
            ax0.axhline(even, color="0.85", lw=0.6, zorder=0)
    ax0.set_xlabel("step")
    ax0.set_ylabel("Euler characteristic")
    ax1.plot(steps, trace.losses(), lw=1.5, color="tab:red")
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_bench_figure(rows, path) -> None:
    """Euler estimates per benchmark row (dots) over row labels."""
    labels = [f"{r.model}\n{r.method},{r.density}" for r in rows]
    vals = [r.euler_estimate for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(rows) + 1.5), 3.4))
    ax.axhline(0, color="0.8", lw=0.6)
    ax.plot(range(len(rows)), vals, "o", ms=5)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=7, rotation=30, ha="right")
    ax.set_ylabel("Euler estimate")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)

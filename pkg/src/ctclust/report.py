"""Figure rendering for posterior summaries.

Uses the non-interactive Agg backend so figures render identically on
headless machines. Each function writes one PNG and returns its path;
the numbers plotted here are exactly the ones the summary CSVs carry.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "render_transition_curves",
    "render_eigenvalue_scatter",
    "render_cluster_count_trace",
]


def render_transition_curves(times, curves_by_label: dict, path) -> str:
    """One panel per cluster, each showing every from-to probability curve."""
    labels = sorted(curves_by_label)
    k = np.asarray(curves_by_label[labels[0]]).shape[1]
    fig, axes = plt.subplots(
        1, len(labels), figsize=(4.0 * len(labels), 3.4), squeeze=False, sharey=True
    )
    for ax, lab in zip(axes[0], labels):
        curves = np.asarray(curves_by_label[lab])
        for a in range(k):
            for b in range(k):
                ax.plot(times, curves[:, a, b], label=f"{a + 1}→{b + 1}")
        ax.set_title(f"cluster {lab}")
        ax.set_xlabel("time gap")
        ax.set_ylim(-0.02, 1.02)
    axes[0][0].set_ylabel("transition probability")
    axes[0][-1].legend(fontsize="x-small", ncol=max(1, k // 2))
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def render_eigenvalue_scatter(rows, path) -> str:
    """Generator eigenvalues per posterior draw, one color per cluster.

    ``rows`` are (iteration, cluster, real, imag) tuples as produced by
    the diagnostics eigenvalue table.
    """
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    labels = sorted(set(r[1] for r in rows))
    for lab in labels:
        re = [r[2] for r in rows if r[1] == lab]
        im = [r[3] for r in rows if r[1] == lab]
        ax.scatter(re, im, s=6, alpha=0.5, label=f"cluster {lab}")
    ax.axvline(0.0, color="gray", lw=0.6)
    ax.axhline(0.0, color="gray", lw=0.6)
    ax.set_xlabel("real part")
    ax.set_ylabel("imaginary part")
    if labels:
        ax.legend(fontsize="x-small")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)


def render_cluster_count_trace(iterations, counts, path) -> str:
    """Cluster count against iteration for the retained samples."""
    fig, ax = plt.subplots(figsize=(6.0, 2.8))
    ax.step(iterations, counts, where="post", lw=0.9)
    ax.set_xlabel("iteration")
    ax.set_ylabel("clusters")
    upper = max(counts) if len(counts) else 1
    ax.set_yticks(range(1, int(upper) + 1))
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return str(path)

"""Matplotlib renderers for the report path; every figure lands next to its CSV."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curves(rows, columns, path, title):
    """Log-scale loss curves from metrics rows (list of dicts with 'step')."""
    steps = [r["step"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for col in columns:
        ax.plot(steps, [r[col] for r in rows], label=col)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_sample_scatter(groups, path, title):
    """Overlayed 2-D point clouds; `groups` maps label -> [n, 2] array."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, pts in groups.items():
        pts = np.asarray(pts)
        ax.scatter(pts[:, 0], pts[:, 1], s=6, alpha=0.5, label=f"{label} (n={len(pts)})")
    ax.set_aspect("equal")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_scout_scatter(previews, scores, best_index, refined, means, path):
    """Candidate previews colored by score, the winner and its refinement marked."""
    previews = np.asarray(previews)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    sc = ax.scatter(previews[:, 0], previews[:, 1], c=scores, s=14, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="score")
    means = np.asarray(means)
    ax.scatter(means[:, 0], means[:, 1], marker="x", c="red", s=40, label="mixture means")
    ax.scatter(*previews[best_index], marker="o", facecolors="none",
               edgecolors="black", s=120, label="selected preview")
    ax.scatter(*np.asarray(refined)[:2], marker="*", c="black", s=160, label="refined sample")
    ax.set_aspect("equal")
    ax.set_title("candidate screening")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_bench_bars(rows, path):
    """Mean strategy latencies with standard-deviation error bars."""
    names = [r.strategy for r in rows]
    avgs = [r.avg_ms for r in rows]
    stds = [r.std_ms for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, avgs, yerr=stds, capsize=4, color="steelblue")
    ax.set_ylabel("milliseconds")
    ax.set_title("strategy latency")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

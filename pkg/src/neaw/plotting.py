"""Optional diagnostic figures (``--plots`` on the CLI). Never required by any report."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def variance_curves(rows, path):
    """Last-layer activity variance per epoch, one line per (rule, seed)."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    runs = {}
    for r in rows:
        runs.setdefault((r["rule"], r["seed"]), []).append((r["epoch"], r["variance"]))
    colors = {}
    for (rule, seed), pts in sorted(runs.items()):
        pts.sort()
        c = colors.setdefault(rule, f"C{len(colors)}")
        ax.plot([p[0] for p in pts], [p[1] for p in pts], color=c, alpha=0.6,
                label=rule if seed == min(s for (r2, s) in runs if r2 == rule) else None)
    ax.set_xlabel("epoch")
    ax.set_ylabel("activity variance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def activity_map(per_class, path, class_names=None):
    plt = _plt()
    M = np.asarray(per_class)
    fig, ax = plt.subplots(figsize=(8, 0.4 * max(len(M), 2) + 1))
    im = ax.imshow(M, aspect="auto", interpolation="nearest", cmap="viridis")
    ax.set_xlabel("neuron")
    if class_names is not None:
        ax.set_yticks(range(len(M)))
        ax.set_yticklabels(class_names)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def dissimilarity_heatmap(D, path, class_names=None):
    plt = _plt()
    D = np.asarray(D)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(D, vmin=0, vmax=max(1.0, float(D.max())), cmap="magma")
    if class_names is not None:
        ax.set_xticks(range(len(D)))
        ax.set_xticklabels(class_names, rotation=45, ha="right")
        ax.set_yticks(range(len(D)))
        ax.set_yticklabels(class_names)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)

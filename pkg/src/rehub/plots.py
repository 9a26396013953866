"""Figure rendering for the report paths; every plot lands next to its CSV."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def scaling_figure(records, path) -> None:
    """Log-log peak allocated elements vs graph size, one line per mode."""
    fig, ax = plt.subplots(figsize=(6, 4))
    by_mode: dict[str, list] = {}
    for r in records:
        if r.peak_elems is not None:
            by_mode.setdefault(r.mode, []).append((r.n_nodes, r.peak_elems))
    for mode, pts in sorted(by_mode.items()):
        ns, peaks = zip(*sorted(pts))
        ax.loglog(ns, peaks, marker="o", label=mode)
    ax.set_xlabel("graph size (nodes)")
    ax.set_ylabel("peak allocated elements")
    ax.set_title("Forward-pass peak memory scaling")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def utilization_figure(report, path) -> None:
    """Grouped bars: share of graphs per 10% utilization bin, per layer."""
    n_layers = len(report.histogram)
    fig, axes = plt.subplots(1, n_layers, figsize=(3.2 * n_layers, 3.2),
                             sharey=True, squeeze=False)
    centers = np.arange(10) * 10 + 5
    for layer, ax in enumerate(axes[0]):
        ax.bar(centers, report.histogram[layer], width=9.0)
        ax.set_title(f"layer {layer + 1}")
        ax.set_xlabel("% hubs used")
        ax.set_xlim(0, 100)
    axes[0][0].set_ylabel("% of graphs")
    fig.suptitle("Hub utilization per layer")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def loss_figure(losses, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, len(losses) + 1), losses, lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def bhattacharyya_figure(per_layer_pcts, path) -> None:
    """Cumulative share of graphs below each similarity percentage."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for layer, pcts in enumerate(per_layer_pcts):
        xs = np.sort(np.asarray(pcts))
        ys = np.arange(1, xs.size + 1) * (100.0 / xs.size)
        ax.plot(xs, ys, label=f"layer {layer + 1}")
    ax.set_xlabel("load-balance similarity to uniform (%)")
    ax.set_ylabel("% of graphs below")
    ax.set_xlim(0, 100)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

"""PNG figures for the reproduce recipes, rendered headless and byte-stable."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["convergence_figure", "hit_curve_figure", "log_bins"]

# no timestamps or version strings, so reruns write identical bytes
_METADATA = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_METADATA)
    plt.close(fig)
    return path


def convergence_figure(path, series: dict, title: str = "") -> Path:
    """``series`` maps a label to the sequence of T iterates."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in series.items():
        ax.plot(range(len(values)), values, marker="o", label=label)
    ax.set_xlabel("Newton iteration")
    ax.set_ylabel("characteristic time T")
    ax.grid(True, alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def log_bins(ranks: np.ndarray, hits: np.ndarray, requests: np.ndarray, nbins: int = 40):
    """Pool hits and requests over log-spaced rank bins; returns (center rank, ratio)."""
    edges = np.unique(np.geomspace(1, ranks.max() + 1, nbins + 1).astype(int))
    centers, ratios = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (ranks >= lo) & (ranks < hi)
        req = requests[sel].sum()
        if req > 0:
            centers.append(np.sqrt(lo * (hi - 1)) if hi - 1 > lo else lo)
            ratios.append(hits[sel].sum() / req)
    return np.asarray(centers), np.asarray(ratios)


def hit_curve_figure(path, ranks, simulated: dict, predicted: dict, title: str = "") -> Path:
    """``simulated`` maps a label to ``(hits, requests)``; ``predicted`` to per-rank probabilities."""
    ranks = np.asarray(ranks)
    fig, ax = plt.subplots(figsize=(6, 4))
    for (label, (hits, requests)), marker in zip(simulated.items(), "os^v"):
        x, y = log_bins(ranks, np.asarray(hits), np.asarray(requests))
        ax.plot(x, y, linestyle="none", marker=marker, label=f"{label} (simulated)")
    for label, values in predicted.items():
        ax.plot(ranks, values, label=f"{label} (predicted)")
    ax.set_xscale("log")
    ax.set_xlabel("content rank")
    ax.set_ylabel("probability of hit")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)

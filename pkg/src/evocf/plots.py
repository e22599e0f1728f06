"""Figures written next to the CSV reports (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def plot_topk(results, path: str | Path, label: str = "evolved") -> Path:
    """HR@K and NDCG@K against K, side by side."""
    ks = [r.k for r in results]
    with plt.rc_context(STYLE):
        fig, (ax_hr, ax_ndcg) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        ax_hr.plot(ks, [r.hr for r in results], marker="o", label=label)
        ax_ndcg.plot(ks, [r.ndcg for r in results], marker="s", label=label)
        for ax, name in ((ax_hr, "HR@K"), (ax_ndcg, "NDCG@K")):
            ax.set_xlabel("K")
            ax.set_ylabel(name)
            ax.set_xticks(ks)
            ax.grid(alpha=0.3)
            ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_history(history, path: str | Path, initial=None) -> Path:
    """Best and mean population fitness per generation."""
    gens = [h.generation for h in history]
    best = [h.best for h in history]
    mean = [h.mean for h in history]
    if initial is not None:
        gens, best, mean = [initial.generation] + gens, [initial.best] + best, [initial.mean] + mean
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.plot(gens, best, marker="o", label="best")
        ax.plot(gens, mean, marker=".", linestyle="--", label="mean")
        ax.set_xlabel("generation")
        ax.set_ylabel("validation NDCG")
        ax.grid(alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)

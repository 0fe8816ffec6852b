"""Figure rendering for experiment reports. All figures are written to files
next to their CSV counterparts; nothing opens an interactive window."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .config import AGENTS


def learning_curves(curves: dict[str, dict[str, np.ndarray]], path: str | Path) -> Path:
    """Mean makespan per episode with a shaded std band, one line per label."""
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    for label, data in curves.items():
        ep = data["episode"]
        ax.plot(ep, data["mean"], label=label, lw=1.4)
        ax.fill_between(ep, data["mean"] - data["std"], data["mean"] + data["std"],
                        alpha=0.2)
    ax.set_xlabel("episode")
    ax.set_ylabel("mean makespan [s]")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def ev_curves(curves: dict[str, dict[str, np.ndarray]], path: str | Path) -> Path:
    """Smoothed explained variance per agent, one panel per label."""
    n = len(curves)
    fig, axes = plt.subplots(1, n, figsize=(3.4 * n, 3.2), sharey=True, squeeze=False)
    for ax, (label, data) in zip(axes[0], curves.items()):
        for agent in AGENTS:
            ax.plot(data["episode"], data[f"ev_{agent}"], label=agent, lw=1.2)
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("episode")
        ax.set_ylim(-1.05, 1.05)
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("explained variance")
    axes[0][-1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def switch_bars(study: dict[str, dict[str, float]], path: str | Path) -> Path:
    """Percentage makespan change per single-agent policy swap."""
    agents = [a for a in AGENTS if a in study]
    changes = [study[a]["pct_change"] for a in agents]
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    bars = ax.bar(agents, changes, color="tab:orange")
    for bar, a in zip(bars, agents):
        ax.annotate(f"p={study[a]['p']:.3g}", (bar.get_x() + bar.get_width() / 2,
                                               bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("makespan change [%]")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def makespan_table(rows: list[dict], path: str | Path) -> Path:
    """Bar chart of mean makespan with std error bars, one bar per method."""
    labels = [r["method"] for r in rows]
    means = [r["mean"] for r in rows]
    stds = [r["std"] for r in rows]
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    ax.bar(labels, means, yerr=stds, capsize=4, color="tab:blue")
    ax.set_ylabel("makespan [s]")
    ax.tick_params(axis="x", rotation=30)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)

"""Figure output for run directories.  Uses the non-interactive Agg backend."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from egocast.metrics import HorizonCurve, auc  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "savefig.dpi": 150,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_horizon_curves(curves: Mapping[str, HorizonCurve], path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for label, c in curves.items():
            tag = f"{label} (AUC {auc(c):.2f})" if len(c.horizons) > 1 else label
            ax.plot(c.horizons, c.values, marker="o", ms=3, label=tag)
        ax.set_xlabel("forecast horizon [s]")
        ax.set_ylabel("MPJPE [cm]")
        ax.set_ylim(bottom=0)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_per_joint(per_joint: Mapping[str, float], path, title: str | None = None) -> Path:
    names = list(per_joint)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.5, 3.2))
        ax.barh(range(len(names)), [per_joint[n] for n in names], color="tab:blue")
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels([n.replace("_", " ") for n in names], fontsize=7)
        ax.invert_yaxis()
        ax.set_xlabel("mean error [cm]")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_loss_trace(trace: Sequence[float], path, window: int = 25) -> Path:
    import numpy as np

    y = np.asarray(trace, dtype=float)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.plot(y, lw=0.6, alpha=0.4, color="tab:gray")
        if len(y) >= window:
            smooth = np.convolve(y, np.ones(window) / window, mode="valid")
            ax.plot(np.arange(window - 1, len(y)), smooth, color="tab:red", lw=1.2)
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("training loss")
        return _save(fig, path)


def plot_bars(labels: Sequence[str], values: Sequence[float], path, ylabel: str) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(3.8, 3.0))
        ax.bar([str(x) for x in labels], values, color="tab:blue")
        ax.set_ylabel(ylabel)
        return _save(fig, path)

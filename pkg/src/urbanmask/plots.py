"""Figures for training curves and method comparisons, written straight to files."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evalmetrics import MetricReport  # noqa: E402
from .optimloss import EpochCurve  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "urbanmask",
}


def plot_curves(curves: Dict[str, EpochCurve], path) -> Path:
    """Loss on the left, validation F1/OA on the right, one line style per pass."""
    path = Path(path)
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_score) = plt.subplots(1, 2, figsize=(9, 3.4))
        for label, curve in curves.items():
            epochs = curve.column("epoch")
            line, = ax_loss.plot(epochs, curve.column("train_loss"), marker="o", ms=3,
                                 label=f"{label} train")
            ax_loss.plot(epochs, curve.column("val_loss"), ls="--", color=line.get_color(),
                         label=f"{label} val")
            ax_score.plot(epochs, curve.column("val_f1"), marker="o", ms=3,
                          color=line.get_color(), label=f"{label} F1")
            ax_score.plot(epochs, curve.column("val_oa"), ls=":", color=line.get_color(),
                          label=f"{label} OA")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("BCE loss")
        ax_score.set_xlabel("epoch")
        ax_score.set_ylabel("validation score")
        ax_score.set_ylim(0, 1.02)
        ax_loss.legend(frameon=False)
        ax_score.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path


def plot_comparison(reports: Dict[str, MetricReport], path,
                    fields: Sequence[str] = ("precision", "recall", "f1", "iou",
                                             "overall_accuracy")) -> Path:
    """Grouped bars: one group per metric, one bar per method."""
    path = Path(path)
    names = list(reports)
    width = 0.8 / max(len(names), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 3.4))
        for i, name in enumerate(names):
            values = [getattr(reports[name], f) for f in fields]
            xs = [j + (i - (len(names) - 1) / 2) * width for j in range(len(fields))]
            ax.bar(xs, values, width=width, label=name)
        ax.set_xticks(range(len(fields)))
        ax.set_xticklabels(["OA" if f == "overall_accuracy" else f for f in fields])
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False, ncol=len(names))
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path

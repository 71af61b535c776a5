"""Matplotlib figures written next to the report files.

Everything renders through the Agg backend; PNG metadata is stripped so that
re-running an experiment rewrites identical files.
"""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .svg import MARKERS, class_color  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
_MPL_MARKERS = {"circle": "o", "triangle": "^", "square": "s"}


def figsize(width: float = 6.0, ratio: float | None = None) -> tuple[float, float]:
    if ratio is None:
        ratio = (math.sqrt(5) - 1) / 2
    return width, width * ratio


def _save(fig, path) -> None:
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def grouped_accuracy_figure(arms: dict, path) -> None:
    """Bar chart of overall/many/medium/few accuracy, one bar group per arm.

    ``arms`` maps an arm name to a :class:`~ladc.evaluation.GroupedAccuracy`.
    """
    groups = ["overall", "many", "medium", "few"]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize(5.5))
        width = 0.8 / max(len(arms), 1)
        x = np.arange(len(groups))
        for k, (name, acc) in enumerate(arms.items()):
            vals = [getattr(acc, g) for g in groups]
            heights = [v if v is not None else 0.0 for v in vals]
            bars = ax.bar(x + (k - (len(arms) - 1) / 2) * width, heights, width, label=name)
            for bar, v in zip(bars, vals):
                if v is None:
                    bar.set_hatch("//")
                    bar.set_alpha(0.3)
        ax.set_xticks(x, groups)
        ax.set_ylim(0, 1)
        ax.set_ylabel("accuracy")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def loss_figure(traces: dict, path) -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize(5.0))
        for name, trace in traces.items():
            ax.plot(np.arange(1, len(trace) + 1), trace, marker=".", label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean cross-entropy")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def scatter_figure(export, path, title: str | None = None) -> None:
    """One panel per origin present (train, synthetic, test) on shared axes."""
    origins = [o for o in ("real", "synthetic", "test") if o in set(export.origins)]
    org = np.asarray(export.origins)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, max(len(origins), 1), figsize=(3.2 * max(len(origins), 1), 3.2),
                                 sharex=True, sharey=True, squeeze=False)
        for ax, o in zip(axes[0], origins):
            mask = org == o
            colors = [class_color(c) for c in export.labels[mask]]
            ax.scatter(export.x[mask], export.y[mask], c=colors, s=6, alpha=0.7,
                       marker=_MPL_MARKERS[MARKERS[o]], linewidths=0)
            ax.set_title(o)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        _save(fig, path)

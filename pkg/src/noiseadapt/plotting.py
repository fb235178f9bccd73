"""Report figures rendered to image files with the non-interactive backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "noiseadapt",
}


def error_bars(reports: Sequence, path, metric: str = "utterance_error") -> Path:
    """Grouped bars of per-condition error (percent), one group per condition."""
    conds = sorted({c for r in reports for c in r.conditions})
    rows = conds + ["Average"]
    width = 0.8 / max(len(reports), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(rows)), 3.0))
        x = np.arange(len(rows))
        for i, r in enumerate(reports):
            vals = [getattr(r.conditions[c], metric) if c in r.conditions else np.nan for c in conds]
            vals.append(r.macro_utterance_error if metric == "utterance_error" else r.macro_frame_error)
            ax.bar(x + (i - (len(reports) - 1) / 2) * width, vals, width, label=r.system)
        ax.set_xticks(x)
        ax.set_xticklabels(rows, rotation=30, ha="right")
        ax.set_ylabel("utterance error (%)" if metric == "utterance_error" else "frame error (%)")
        ax.legend(frameon=False, ncol=min(3, len(reports)))
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def scatter(table, path, title: str = "") -> Path:
    """2-D projected features coloured by noise label."""
    labels = np.asarray(table.labels)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.4))
        for name in sorted(set(table.labels)):
            m = labels == name
            ax.scatter(np.asarray(table.x)[m], np.asarray(table.y)[m], s=6, alpha=0.7, label=name,
                       linewidths=0)
        ax.set_xlabel("LD1")
        ax.set_ylabel("LD2")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, markerscale=2)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)

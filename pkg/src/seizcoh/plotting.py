"""Figures for the report stage.  Everything renders off-screen to files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import PredictionSeries, TransferCurve  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _break_gaps(t, *ys, max_step: float):
    """Insert NaN after every step in ``t`` longer than ``max_step`` so lines do not bridge it."""
    cut = np.flatnonzero(np.diff(t) > max_step) + 1
    return [np.insert(np.asarray(v, dtype=float), cut, np.nan) for v in (t, *ys)]


def plot_predictions(series_1: PredictionSeries, series_2: PredictionSeries, onsets_s, path) -> Path:
    """Clip predictions of both methods over time, mean with a one-SD band."""
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(8, 3))
        hours = series_1.start_s / 3600.0
        step = np.median(np.diff(hours)) if hours.size > 1 else 1.0
        for s, color in ((series_1, "tab:blue"), (series_2, "tab:orange")):
            h, p, sd = _break_gaps(hours, s.p, s.sd, max_step=1.5 * step)
            ax.plot(h, p, ".-", color=color, lw=0.8, ms=3, label=s.method)
            ax.fill_between(h, p - sd, p + sd, color=color, alpha=0.2, lw=0)
        pre = series_1.label == 1
        ax.scatter(hours[pre], np.full(pre.sum(), -0.05), marker="|", color="k", s=20, label="preictal clip")
        for k, t in enumerate(onsets_s):
            ax.axvline(t / 3600.0, color="tab:red", lw=0.8, ls="--", label="seizure onset" if k == 0 else None)
        ax.set_ylim(-0.1, 1.05)
        ax.set_xlabel("time (h)")
        ax.set_ylabel("predicted probability")
        ax.legend(loc="upper right", fontsize=7, frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_transfer(curves: list[TransferCurve], path) -> Path:
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(curves), figsize=(4 * len(curves), 3), squeeze=False)
        for ax, c in zip(axes[0], curves):
            ax.plot(c.thresholds, np.where(c.defined, c.auc, np.nan), "o-", ms=3,
                    label=f"{c.target_method} filtered by {c.filter_method}")
            ax.plot(c.thresholds, c.control_auc, "s--", ms=3, color="grey", label="random omission")
            ax.axhline(c.base_auc, color="k", lw=0.6)
            ax.set_xlabel("error threshold $e_{th}$")
            ax.set_ylabel(f"ROC AUC ({c.target_method})")
            ax.set_xlim(0, 1)
            ax.legend(fontsize=7, frameon=False, loc="lower left")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path

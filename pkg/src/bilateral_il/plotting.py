"""PNG figures rendered next to the CSV traces written by the CLI."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

VARIANT_STYLE = {"f2fl": ("tab:blue", "F2FL"), "without-force": ("tab:red", "F2FL w/o force")}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def force_trace_figure(traces: dict, path, band=None, window=None, ylabel="contact torque [N m]"):
    """``traces`` maps a label (usually the variant) to a ``(t, force)`` pair."""
    fig, ax = plt.subplots(figsize=(6.4, 3.4))
    for label, (t, f) in traces.items():
        color, name = VARIANT_STYLE.get(label, (None, label))
        ax.plot(t, np.abs(f), color=color, label=name, lw=1.2)
    if band is not None:
        ax.axhspan(band[0], band[1], color="0.85", zorder=0, label="success band")
    if window is not None:
        for x in window:
            ax.axvline(x, color="0.5", ls=":", lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False, fontsize=8)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return _save(fig, path)


def tip_trajectory_figure(paths: dict, path):
    """``paths`` maps a label to an ``(n, 4)`` array of t, x, y, pen_down."""
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    for label, tr in paths.items():
        color, name = VARIANT_STYLE.get(label, (None, label))
        down = tr[:, 3] > 0
        ax.plot(tr[:, 1], tr[:, 2], color=color, lw=0.6, alpha=0.35)
        xy = np.where(down[:, None], tr[:, 1:3], np.nan)
        ax.plot(xy[:, 0], xy[:, 1], color=color, lw=2.0, label=f"{name} (pen down)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def success_table_figure(reports: dict, path):
    """Grouped bars of per-task successes, one group per task."""
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * _n_tasks(reports) + 2), 3.4))
    names = list(reports)
    width = 0.8 / max(len(names), 1)
    for k, variant in enumerate(names):
        rep = reports[variant]
        counts = [row["successes"] for row in rep["per_task"]]
        x = np.arange(len(counts)) + (k - (len(names) - 1) / 2) * width
        color, name = VARIANT_STYLE.get(variant, (None, variant))
        ax.bar(x, counts, width, color=color,
               label=f"{name}: {rep['successes']}/{rep['trials']}")
    first = reports[names[0]]["per_task"]
    ax.set_xticks(np.arange(len(first)))
    ax.set_xticklabels([row["label"] or str(row["task"]) for row in first], rotation=60,
                       fontsize=7)
    ax.set_ylabel("successes")
    ax.set_ylim(0, max(row["trials"] for row in first) + 0.5)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def loss_curve_figure(history, path):
    h = np.asarray(history, dtype=float)
    fig, ax = plt.subplots(figsize=(5.2, 3.2))
    ax.semilogy(h[:, 0], h[:, 1], label="train")
    if np.any(np.isfinite(h[:, 2])):
        ax.semilogy(h[:, 0], h[:, 2], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (normalized)")
    ax.legend(frameon=False)
    return _save(fig, path)


def _n_tasks(reports) -> int:
    return len(next(iter(reports.values()))["per_task"]) if reports else 0

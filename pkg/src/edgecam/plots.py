"""SVG figures for experiment reports. File output only."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "edgecam"
_META = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def recall_vs_cost(reports, path: Path) -> Path | None:
    static = [r for r in reports if r.config.cost_mode == "static"]
    costs = sorted({r.config.e_tr_nj for r in static})
    if len(costs) < 2:
        return None
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for policy in dict.fromkeys(r.policy for r in static):
        rows = sorted((r.config.e_tr_nj, r) for r in static if r.policy == policy)
        x = [c for c, _ in rows]
        ax1.errorbar(x, [r.recall_mean for _, r in rows], yerr=[r.recall_std for _, r in rows],
                     marker="o", capsize=3, label=policy)
        ax2.plot(x, [r.downtime_mean / 60.0 for _, r in rows], marker="o", label=policy)
    ax1.set_xlabel("transmission cost (nJ/bit)")
    ax1.set_ylabel("mean recall")
    ax2.set_xlabel("transmission cost (nJ/bit)")
    ax2.set_ylabel("downtime (h/day)")
    ax1.legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def daily_panels(reports, path: Path) -> Path:
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    for r in reports:
        label = f"{r.policy} {r.cost_label}" if len({x.cost_label for x in reports}) > 1 else r.policy
        days = r.runs[0].days
        axes[0].plot(days, np.mean([run.harvest_j.sum(axis=1) for run in r.runs], axis=0) / 1e3,
                     label=label)
        axes[1].plot(days, np.nanmean(r.daily_recall_matrix(), axis=0), label=label)
        axes[2].plot(days, np.mean([run.downtime_min.mean(axis=1) for run in r.runs], axis=0),
                     label=label)
    axes[0].set_ylabel("harvest (kJ/day)")
    axes[1].set_ylabel("daily recall")
    axes[2].set_ylabel("downtime (min/day)")
    axes[2].set_xlabel("day")
    axes[1].legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def summary_bars(reports, path: Path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    names = [r.policy if len({x.cost_label for x in reports}) == 1 else f"{r.policy}\n{r.cost_label}"
             for r in reports]
    x = np.arange(len(reports))
    ax1.bar(x, [r.recall_mean for r in reports], yerr=[r.recall_std for r in reports], capsize=3)
    ax2.bar(x, [r.downtime_mean for r in reports], yerr=[r.downtime_std for r in reports], capsize=3)
    for ax, lab in ((ax1, "mean recall"), (ax2, "downtime (min/day)")):
        ax.set_xticks(x)
        ax.set_xticklabels(names, fontsize=7)
        ax.set_ylabel(lab)
    fig.tight_layout()
    return _save(fig, path)


def emit_plots(reports, out: Path) -> list[Path]:
    written = [daily_panels(reports, out / "daily_panels.svg"),
               summary_bars(reports, out / "summary_bars.svg")]
    p = recall_vs_cost(reports, out / "recall_vs_cost.svg")
    if p is not None:
        written.append(p)
    return written

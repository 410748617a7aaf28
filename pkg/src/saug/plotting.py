"""Report figures (written as PNG next to the CSV outputs)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def degree_histogram(graphs: dict, path) -> None:
    """Log-log degree distribution of each named graph."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for name, g in graphs.items():
        deg = g.degrees
        counts = np.bincount(deg)
        ks = np.flatnonzero(counts)
        ks = ks[ks > 0]
        ax.loglog(ks, counts[ks], "o", ms=3, alpha=0.7, label=name)
    ax.set_xlabel("degree")
    ax.set_ylabel("nodes")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def training_curves(traces: dict, path) -> None:
    """``traces`` maps a label to rows of (epoch, train_loss, val_metric)."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for name, rows in traces.items():
        rows = np.asarray(rows, dtype=float)
        if rows.size:
            ax.plot(rows[:, 0], rows[:, 1], label=f"{name} train")
            if np.isfinite(rows[:, 2]).any():
                ax.plot(rows[:, 0], rows[:, 2], "--", label=f"{name} val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss / validation signal")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_plot(rows, axis: str, path, metric: str | None = None) -> None:
    """Mean and sample std of ``metric`` over seeds for each swept value."""
    if metric is None:
        metric = "micro" if any(r.get("micro") is not None for r in rows) else "auc"
    values = sorted({r["value"] for r in rows})
    means, stds = [], []
    for v in values:
        m = np.array([r[metric] for r in rows if r["value"] == v and r[metric] is not None], dtype=float)
        means.append(m.mean() if m.size else np.nan)
        stds.append(m.std(ddof=1) if m.size > 1 else 0.0)
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.errorbar(values, means, yerr=stds, marker="o", capsize=3)
    ax.set_xlabel(axis)
    ax.set_ylabel(metric)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def seed_metrics(runs, path) -> None:
    """Bar chart of the per-seed test metrics of one pipeline run."""
    keys = [k for k in ("macro_f1", "micro_f1", "auc") if any(r.get(k) is not None for r in runs)]
    seeds = [r["seed"] for r in runs]
    x = np.arange(len(seeds))
    width = 0.8 / max(len(keys), 1)
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for i, k in enumerate(keys):
        ax.bar(x + i * width, [r[k] for r in runs], width, label=k)
    ax.set_xticks(x + width * (len(keys) - 1) / 2)
    ax.set_xticklabels([str(s) for s in seeds])
    ax.set_xlabel("seed")
    ax.set_ylim(0, 1)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

COMPONENTS = ("sup", "kd_pred", "kd_feat", "mor", "rhy", "total")


def loss_curves(runs, path: Path) -> Path:
    fig, axes = plt.subplots(1, len(runs), figsize=(4.5 * len(runs), 3.5), squeeze=False)
    for ax, (name, run) in zip(axes[0], runs.items()):
        epochs = [e.epoch for e in run.epochs]
        for comp in COMPONENTS:
            values = [getattr(e.losses, comp) for e in run.epochs]
            if any(values):
                ax.plot(epochs, values, label=comp)
        ax.set_yscale("symlog", linthresh=1e-2)
        ax.set_title(name)
        ax.set_xlabel("epoch")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def sweep_curves(sweep, path: Path) -> Path:
    params = sweep.params()
    fig, axes = plt.subplots(1, len(params), figsize=(4 * len(params), 3.2), squeeze=False)
    for ax, param in zip(axes[0], params):
        xs, ys = zip(*sweep.series(param))
        ax.plot(xs, ys, marker="o")
        ax.set_xlabel(param)
        ax.set_ylabel(sweep.metric_name)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def throughput_scatter(bench, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for name, b in bench.items():
        ax.scatter(b.param_count, b.batches_per_second)
        ax.annotate(name, (b.param_count, b.batches_per_second), fontsize=8)
    ax.set_xscale("log")
    ax.set_xlabel("parameters")
    ax.set_ylabel("batches / s")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path

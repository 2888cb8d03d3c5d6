"""Task metrics, inference throughput measurement and report emission."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import torch

from .datagen import TASK_NAMES, PpgDataset
from .model import count_params

# metric name -> True when lower is better
METRIC_DIRECTION = {"mse": True, "mae": True, "accuracy": False, "f1": False}

IMPROVEMENT_FOOTER = (
    "Relative improvement is (baseline - new) / baseline for lower-is-better metrics "
    "(mse, mae) and (new - baseline) / baseline for higher-is-better metrics "
    "(accuracy, f1), computed from unrounded metric values and printed to two decimals. "
    "Values are never adjusted to match externally published figures, whose own rounding "
    "of the percentages can differ by a few hundredths of a point."
)


@dataclass
class Metrics:
    mse: Optional[float] = None
    mae: Optional[float] = None
    accuracy: Optional[float] = None
    f1: Optional[float] = None

    def as_dict(self) -> dict[str, float]:
        return {k: v for k, v in vars(self).items() if v is not None}


@dataclass
class BenchResult:
    batches_per_second: float
    batch_size: int
    warmup_batches: int
    measured_batches: int
    param_count: int
    elapsed_s: float


def regression_metrics(pred, target) -> Metrics:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} vs target {target.shape}")
    err = pred - target
    return Metrics(mse=float(np.mean(err * err)), mae=float(np.mean(np.abs(err))))


def confusion(pred_labels, target) -> tuple[int, int, int, int]:
    pred_labels = np.asarray(pred_labels)
    target = np.asarray(target)
    tp = int(np.sum((pred_labels == 1) & (target == 1)))
    fp = int(np.sum((pred_labels == 1) & (target != 1)))
    fn = int(np.sum((pred_labels != 1) & (target == 1)))
    tn = int(np.sum((pred_labels != 1) & (target != 1)))
    return tp, fp, fn, tn


def f1_from_confusion(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def classification_metrics(pred_labels, target) -> Metrics:
    pred_labels = np.asarray(pred_labels)
    target = np.asarray(target)
    if pred_labels.shape != target.shape or target.size == 0:
        raise ValueError(f"prediction {pred_labels.shape} vs target {target.shape}")
    tp, fp, fn, tn = confusion(pred_labels, target)
    return Metrics(accuracy=(tp + tn) / target.size, f1=f1_from_confusion(tp, fp, fn))


@torch.no_grad()
def predict(model, signals: np.ndarray, batch_size: int = 256) -> np.ndarray:
    was_training = model.training
    model.eval()
    x = torch.as_tensor(signals, dtype=torch.float32)
    outs = [model(x[i : i + batch_size]).prediction for i in range(0, len(x), batch_size)]
    model.train(was_training)
    return torch.cat(outs).numpy()


def evaluate(model, dataset: PpgDataset, task: str | None = None) -> Metrics:
    task = task or dataset.task_name
    if task != dataset.task_name or task != model.config.task:
        raise ValueError(
            f"task mismatch: requested {task!r}, dataset {dataset.task_name!r}, "
            f"model head {model.config.task!r}"
        )
    pred = predict(model, dataset.signals())
    if task == "regression":
        return regression_metrics(pred, dataset.labels())
    return classification_metrics(pred.argmax(axis=1), dataset.labels())


def selection_metric(metrics: Metrics, task: str) -> float:
    return metrics.mae if task == "regression" else metrics.f1


@torch.inference_mode()
def bench_throughput(
    model,
    batch_size: int = 64,
    warmup_batches: int = 5,
    measured_batches: int = 50,
    input_shape: Sequence[int] | None = None,
    seed: int = 0,
) -> BenchResult:
    """Batches per second of forward passes on one fixed random batch."""
    if measured_batches < 1:
        raise ValueError("measured_batches must be >= 1")
    if warmup_batches < 0 or batch_size < 1:
        raise ValueError("warmup_batches must be >= 0 and batch_size >= 1")
    shape = tuple(input_shape) if input_shape else (batch_size, model.config.signal_len)
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(shape, generator=gen)
    was_training = model.training
    model.eval()
    for _ in range(warmup_batches):
        model(x)
    start = time.perf_counter()
    for _ in range(measured_batches):
        model(x)
    elapsed = time.perf_counter() - start
    model.train(was_training)
    return BenchResult(
        batches_per_second=measured_batches / elapsed,
        batch_size=shape[0],
        warmup_batches=warmup_batches,
        measured_batches=measured_batches,
        param_count=count_params(model),
        elapsed_s=elapsed,
    )


def relative_improvement(new: float, baseline: float, lower_is_better: bool) -> float:
    if baseline == 0:
        raise ZeroDivisionError("baseline metric is zero")
    return (baseline - new) / baseline if lower_is_better else (new - baseline) / baseline


def format_improvement(value: float) -> str:
    return f"{value * 100:+.2f}%"


def comparison_rows(
    metrics: Mapping[str, Metrics], baseline: str | None = None
) -> tuple[list[str], list[list[str]]]:
    """Header and rows of the comparison table, improvements against ``baseline``."""
    names = list(metrics)
    if not names:
        raise ValueError("nothing to compare")
    keys = [k for k in METRIC_DIRECTION if any(k in m.as_dict() for m in metrics.values())]
    show_improvement = len(names) > 1
    base_name = baseline if baseline is not None else names[0]
    if show_improvement and base_name not in metrics:
        raise KeyError(f"baseline {base_name!r} not among {names}")
    header = ["model"]
    for k in keys:
        header.append(k)
        if show_improvement:
            header.append(f"{k}_vs_{base_name}")
    rows = []
    base = metrics[base_name].as_dict() if show_improvement else {}
    for name in names:
        values = metrics[name].as_dict()
        row = [name]
        for k in keys:
            v = values.get(k)
            row.append("" if v is None else f"{v:.6g}")
            if show_improvement:
                if v is None or k not in base or name == base_name:
                    row.append("")
                else:
                    row.append(format_improvement(relative_improvement(v, base[k], METRIC_DIRECTION[k])))
        rows.append(row)
    return header, rows


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def emit_report(
    out_dir,
    metrics: Mapping[str, Metrics] | None = None,
    runs: Mapping[str, "RunReport"] | None = None,
    bench: Mapping[str, BenchResult] | None = None,
    sweep=None,
    baseline: str | None = None,
) -> list[Path]:
    """Write the comparison table, a text summary and the static plots.

    ``metrics`` defaults to each run's best-epoch validation metrics.
    Returns the paths written.
    """
    runs = dict(runs or {})
    bench = dict(bench or {})
    metrics = dict(metrics or {name: r.best_metrics for name, r in runs.items()})
    if not (metrics or bench or sweep):
        raise ValueError("emit_report needs at least one input record")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc

    written: list[Path] = []
    lines = []
    if metrics:
        header, rows = comparison_rows(metrics, baseline)
        path = out / "comparison.csv"
        _write_csv(path, header, rows)
        written.append(path)
        lines.append("Comparison")
        lines += ["  " + "  ".join(f"{h}={v}" for h, v in zip(header, row) if v) for row in rows]
    if bench:
        path = out / "efficiency.csv"
        header = ["model", "batches_per_second", "param_count", "batch_size",
                  "warmup_batches", "measured_batches"]
        rows = [[n, f"{b.batches_per_second:.2f}", b.param_count, b.batch_size,
                 b.warmup_batches, b.measured_batches] for n, b in bench.items()]
        _write_csv(path, header, rows)
        written.append(path)
        lines.append("Efficiency")
        lines += [f"  {n}: {b.batches_per_second:.2f} batch/s, {b.param_count:,} params"
                  for n, b in bench.items()]
    if sweep is not None and len(sweep):
        path = out / "sweep.csv"
        _write_csv(path, sweep.header(), sweep.rows())
        written.append(path)
    if metrics and len(metrics) > 1:
        lines += ["", IMPROVEMENT_FOOTER]
    summary = out / "summary.txt"
    summary.write_text("\n".join(lines) + "\n")
    written.append(summary)

    from . import plots

    if runs:
        written.append(plots.loss_curves(runs, out / "loss_curves.png"))
    if sweep is not None and len(sweep):
        written.append(plots.sweep_curves(sweep, out / "sweep.png"))
    if bench:
        written.append(plots.throughput_scatter(bench, out / "throughput_vs_params.png"))
    return written

"""Teacher training, distillation against a frozen teacher, and ablation sweeps."""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .datagen import PpgDataset
from .evalbench import Metrics, evaluate, selection_metric
from .losses import DistillConfig, LossBreakdown, LossConfigError, joint_objective
from .model import Adapter, ModelConfig, ModelOutput, build_model, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("epoch", "sup", "kd_pred", "kd_feat", "mor", "rhy", "total", "val_metric")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_init: float = 1e-5
    lr_max: float = 1e-3
    eta_min: float = 1e-6
    warmup_ratio: float = 0.25
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 20
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.lr_init > self.lr_max or self.eta_min > self.lr_max:
            raise ValueError("need lr_init <= lr_max and eta_min <= lr_max")
        if min(self.lr_init, self.lr_max, self.eta_min) < 0:
            raise ValueError("learning rates must be >= 0")
        if not (0 <= self.warmup_ratio < 1):
            raise ValueError("warmup_ratio must lie in [0, 1)")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch_size and max_epochs must be >= 1")
        if not (0 < self.val_fraction < 1):
            raise ValueError("val_fraction must lie in (0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    val_metric: float
    val_metrics: Metrics


@dataclass
class RunReport:
    task: str
    metric_name: str
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    checkpoint_path: str | None = None
    wall_clock_s: float = 0.0

    @property
    def best_metrics(self) -> Metrics:
        return self.epochs[self.best_epoch].val_metrics

    @property
    def best_metric(self) -> float:
        return self.epochs[self.best_epoch].val_metric

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for e in self.epochs:
                b = e.losses
                writer.writerow(
                    [e.epoch] + [repr(v) for v in (b.sup, b.kd_pred, b.kd_feat, b.mor, b.rhy, b.total)]
                    + [repr(e.val_metric)]
                )


def lr_at_step(step: int, total_steps: int, config: TrainConfig) -> float:
    """Batch-level linear warmup from lr_init to lr_max, then cosine down to eta_min.

    Both phases are written as convex combinations so the endpoints come out
    exactly: lr_init at step 0, lr_max at the warmup boundary, eta_min at the
    last step.
    """
    if total_steps < 2:
        raise ValueError("total_steps must be >= 2")
    if not (0 <= step < total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warm = min(int(round(config.warmup_ratio * total_steps)), total_steps - 2)
    if step < warm:
        frac = step / warm
        return (1.0 - frac) * config.lr_init + frac * config.lr_max
    progress = (step - warm) / (total_steps - 1 - warm)
    c = 0.5 * (1.0 + math.cos(math.pi * progress))
    if progress == 1.0:
        c = 0.0
    return c * config.lr_max + (1.0 - c) * config.eta_min


def early_stop_check(metric_history: Sequence[float], patience: int, mode: str = "min") -> bool:
    """True once ``patience`` epochs have passed since the best value.

    The first occurrence of the best value counts; ties are not improvements.
    """
    if not metric_history:
        raise ValueError("metric history is empty")
    values = list(metric_history)
    best = int(np.argmin(values) if mode == "min" else np.argmax(values))
    return (len(values) - 1 - best) >= patience


def _improved(value: float, best: float | None, mode: str) -> bool:
    if best is None:
        return True
    return value < best if mode == "min" else value > best


def _fill_target_stats(config: ModelConfig, train: PpgDataset) -> ModelConfig:
    if config.task != "regression" or config.target_mean is not None:
        return config
    labels = train.labels().astype(np.float64)
    std = float(labels.std())
    return replace(config, target_mean=float(labels.mean()), target_std=std if std > 0 else 1.0)


def _check_task(config: ModelConfig, dataset: PpgDataset, who: str):
    if config.task != dataset.task_name:
        raise ValueError(f"{who} head is {config.task!r} but dataset task is {dataset.task_name!r}")
    if config.signal_len != dataset.signal_length:
        raise ValueError(
            f"{who} expects signals of length {config.signal_len}, dataset has {dataset.signal_length}"
        )


@torch.no_grad()
def teacher_outputs(teacher, signals: torch.Tensor, batch_size: int = 256) -> ModelOutput:
    """Frozen-teacher outputs for every training signal, computed once."""
    teacher.eval()
    outs = [teacher(signals[i : i + batch_size]) for i in range(0, len(signals), batch_size)]
    patches = None if outs[0].patch_features is None else torch.cat([o.patch_features for o in outs])
    return ModelOutput(
        patches,
        torch.cat([o.pooled_feature for o in outs]),
        torch.cat([o.prediction for o in outs]),
    )


def _slice(out: ModelOutput, idx: torch.Tensor) -> ModelOutput:
    return ModelOutput(
        None if out.patch_features is None else out.patch_features[idx],
        out.pooled_feature[idx],
        out.prediction[idx],
    )


def _fit(
    model,
    adapter: Adapter | None,
    train: PpgDataset,
    val: PpgDataset,
    distill_config: DistillConfig,
    train_config: TrainConfig,
    teacher_cache: ModelOutput | None,
) -> RunReport:
    task = model.config.task
    mode = "min" if task == "regression" else "max"
    x = torch.as_tensor(train.signals())
    y = torch.as_tensor(train.labels())
    n = len(x)
    per_epoch = math.ceil(n / train_config.batch_size)
    total_steps = max(2, train_config.max_epochs * per_epoch)

    params = list(model.parameters()) + (list(adapter.parameters()) if adapter is not None else [])
    optimizer = torch.optim.Adam(
        params, lr=train_config.lr_init, betas=(train_config.adam_beta1, train_config.adam_beta2)
    )
    shuffle = torch.Generator().manual_seed(train_config.seed)
    report = RunReport(task=task, metric_name="mae" if task == "regression" else "f1")
    best_value, best_state = None, None
    history: list[float] = []
    step = 0
    start = time.perf_counter()

    for epoch in range(train_config.max_epochs):
        model.train()
        order = torch.randperm(n, generator=shuffle)
        sums = np.zeros(6)
        for b in range(per_epoch):
            idx = order[b * train_config.batch_size : (b + 1) * train_config.batch_size]
            lr = lr_at_step(step, total_steps, train_config)
            for group in optimizer.param_groups:
                group["lr"] = lr
            student_out = model(x[idx])
            teacher_out = _slice(teacher_cache, idx) if teacher_cache is not None else student_out
            loss, parts = joint_objective(
                teacher_out, student_out, y[idx],
                adapter.weight if adapter is not None else None, distill_config, task,
            )
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {b} (lr={lr:.3g}): {parts.as_dict()}"
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            sums += [parts.sup, parts.kd_pred, parts.kd_feat, parts.mor, parts.rhy, parts.total]
            step += 1
        m = sums / per_epoch
        losses = LossBreakdown.combine(*m[:5], distill_config)
        metrics = evaluate(model, val)
        value = selection_metric(metrics, task)
        report.epochs.append(EpochRecord(epoch, losses, value, metrics))
        history.append(value)
        if _improved(value, best_value, mode):
            best_value = value
            report.best_epoch = epoch
            best_state = (
                copy.deepcopy(model.state_dict()),
                copy.deepcopy(adapter.state_dict()) if adapter is not None else None,
            )
        log.debug("epoch %d total=%.4f val_%s=%.4f", epoch, losses.total, report.metric_name, value)
        if early_stop_check(history, train_config.patience, mode):
            break

    model.load_state_dict(best_state[0])
    if adapter is not None:
        adapter.load_state_dict(best_state[1])
    model.eval()
    report.wall_clock_s = time.perf_counter() - start
    return report


def train_teacher(
    dataset: PpgDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out: str | Path | None = None,
):
    """Supervised training from scratch. Returns ``(model, report)``."""
    _check_task(model_config, dataset, "model")
    train, val = dataset.split(train_config.val_fraction)
    config = _fill_target_stats(model_config, train)
    torch.manual_seed(train_config.seed)
    model = build_model(config)
    no_kd = DistillConfig(alpha=0.0, beta=0.0, gamma=0.0, patch_len=config.patch_len)
    report = _fit(model, None, train, val, no_kd, train_config, None)
    if out is not None:
        save_checkpoint(out, model, meta={"best_epoch": report.best_epoch})
        report.checkpoint_path = str(out)
    return model, report


def _load_teacher(teacher):
    if isinstance(teacher, (str, Path)):
        teacher, _, _ = load_checkpoint(teacher)
    return teacher


def distill(
    teacher,
    student_config: ModelConfig,
    distill_config: DistillConfig,
    train_config: TrainConfig,
    dataset: PpgDataset,
    out: str | Path | None = None,
):
    """Train a student under the joint objective against a frozen teacher.

    ``teacher`` is a model or a checkpoint path. Returns ``(student, adapter, report)``.
    """
    teacher = _load_teacher(teacher)
    _check_task(teacher.config, dataset, "teacher")
    _check_task(student_config, dataset, "student")
    if distill_config.gamma > 0 and student_config.family != "patch_transformer":
        raise LossConfigError("gamma > 0 requires a patch-based student; an MLP supports global KD only")
    if student_config.family == "patch_transformer":
        if teacher.config.family != "patch_transformer":
            raise ValueError("patch-level distillation needs a patch-transformer teacher")
        if teacher.config.patch_len != student_config.patch_len:
            raise ValueError(
                f"teacher patch_len {teacher.config.patch_len} != student {student_config.patch_len}"
            )
        if distill_config.gamma > 0 and distill_config.patch_len != student_config.patch_len:
            raise LossConfigError("distill patch_len disagrees with the student config")
    for p in teacher.parameters():
        p.requires_grad_(False)
    teacher.eval()

    train, val = dataset.split(train_config.val_fraction)
    config = _fill_target_stats(student_config, train)
    torch.manual_seed(train_config.seed)
    student = build_model(config)
    adapter = Adapter(
        teacher.config.feature_dim, config.feature_dim,
        generator=torch.Generator().manual_seed(train_config.seed + 1),
    )
    cache = teacher_outputs(teacher, torch.as_tensor(train.signals()))
    report = _fit(student, adapter, train, val, distill_config, train_config, cache)
    if out is not None:
        save_checkpoint(out, student, adapter, meta={"best_epoch": report.best_epoch})
        report.checkpoint_path = str(out)
    return student, adapter, report


@dataclass
class SweepRow:
    param: str
    value: float
    report: RunReport


@dataclass
class SweepTable:
    metric_name: str
    rows_: list[SweepRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows_)

    def params(self) -> list[str]:
        return list(dict.fromkeys(r.param for r in self.rows_))

    def series(self, param: str) -> list[tuple[float, float]]:
        return [(r.value, r.report.best_metric) for r in self.rows_ if r.param == param]

    def header(self) -> list[str]:
        return ["param", "value", self.metric_name, "best_epoch"]

    def rows(self) -> list[list]:
        return [
            [r.param, repr(r.value), repr(r.report.best_metric), r.report.best_epoch]
            for r in self.rows_
        ]


def ablation_sweep(
    teacher,
    student_config: ModelConfig,
    base: DistillConfig,
    train_config: TrainConfig,
    dataset: PpgDataset,
    grid: Mapping[str, Sequence[float]],
    out_dir: str | Path | None = None,
) -> SweepTable:
    """One-at-a-time sweep: each grid value replaces its field in ``base``.

    Duplicate values for a parameter run once. All runs share ``train_config.seed``.
    """
    teacher = _load_teacher(teacher)
    table = SweepTable(metric_name="mae" if dataset.task_name == "regression" else "f1")
    for param, values in grid.items():
        if param not in ("alpha", "beta", "gamma"):
            raise ValueError(f"cannot sweep {param!r}; choose alpha, beta or gamma")
        for value in dict.fromkeys(float(v) for v in values):
            if value < 0:
                raise ValueError(f"{param}={value} must be >= 0")
            cfg = replace(base, **{param: value})
            ckpt = None
            if out_dir is not None:
                ckpt = Path(out_dir) / f"{param}_{value:g}.pt"
            _, _, report = distill(teacher, student_config, cfg, train_config, dataset, ckpt)
            if out_dir is not None:
                report.write_csv(Path(out_dir) / f"{param}_{value:g}.csv")
            table.rows_.append(SweepRow(param, value, report))
    return table

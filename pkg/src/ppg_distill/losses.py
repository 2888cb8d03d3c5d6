"""Loss terms of the joint distillation objective.

Every function accepts either a single sequence (``N x d``) or a batch
(``B x N x d``) for the patch-level terms. Teacher tensors are detached inside
each loss so gradients only reach the student and the adapter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F

from .model import ModelOutput, adapt


class LossConfigError(ValueError):
    pass


class DegenerateStructureError(ValueError):
    pass


@dataclass
class DistillConfig:
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 1.0
    tau: float = 2.0
    pred_kd_temp: float = 2.0
    smooth_l1_beta: float = 1.0
    patch_len: int = 40

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise LossConfigError(f"{name} must be >= 0")
        for name in ("tau", "pred_kd_temp", "smooth_l1_beta"):
            if getattr(self, name) <= 0:
                raise LossConfigError(f"{name} must be > 0")
        if self.patch_len < 1:
            raise LossConfigError("patch_len must be >= 1")


@dataclass
class LossBreakdown:
    sup: float
    kd_pred: float
    kd_feat: float
    mor: float
    rhy: float
    total: float

    @classmethod
    def combine(cls, sup, kd_pred, kd_feat, mor, rhy, config: DistillConfig) -> "LossBreakdown":
        sup, kd_pred, kd_feat, mor, rhy = (float(v) for v in (sup, kd_pred, kd_feat, mor, rhy))
        total = sup + config.alpha * kd_pred + config.beta * kd_feat + config.gamma * (mor + rhy)
        return cls(sup, kd_pred, kd_feat, mor, rhy, total)

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def supervised_loss(prediction: torch.Tensor, target: torch.Tensor, task: str) -> torch.Tensor:
    """MAE for regression, mean cross-entropy over logits for classification."""
    if task == "regression":
        if prediction.shape != target.shape:
            raise ValueError(f"prediction {tuple(prediction.shape)} vs target {tuple(target.shape)}")
        return F.l1_loss(prediction, target.to(prediction.dtype))
    if task == "classification":
        if prediction.ndim != 2 or target.ndim != 1 or prediction.shape[0] != target.shape[0]:
            raise ValueError(
                f"classification expects logits (B, C) and targets (B,), got "
                f"{tuple(prediction.shape)} and {tuple(target.shape)}"
            )
        return F.cross_entropy(prediction, target.long())
    raise ValueError(f"unknown task {task!r}")


def prediction_kd_loss(
    teacher_pred: torch.Tensor, student_pred: torch.Tensor, task: str, pred_kd_temp: float = 2.0
) -> torch.Tensor:
    """MSE to the teacher for regression; T^2-scaled KL(teacher || student) for logits."""
    if teacher_pred.shape != student_pred.shape:
        raise ValueError(f"teacher {tuple(teacher_pred.shape)} vs student {tuple(student_pred.shape)}")
    teacher_pred = teacher_pred.detach()
    if task == "regression":
        return F.mse_loss(student_pred, teacher_pred)
    if task == "classification":
        t = pred_kd_temp
        log_p_s = F.log_softmax(student_pred / t, dim=-1)
        log_p_t = F.log_softmax(teacher_pred / t, dim=-1)
        return F.kl_div(log_p_s, log_p_t, log_target=True, reduction="batchmean") * t * t
    raise ValueError(f"unknown task {task!r}")


def feature_kd_loss(
    teacher_pooled: torch.Tensor, student_pooled: torch.Tensor, adapter_weight: torch.Tensor
) -> torch.Tensor:
    projected = adapt(teacher_pooled.detach(), adapter_weight)
    if projected.shape != student_pooled.shape:
        raise ValueError(
            f"adapted teacher {tuple(projected.shape)} vs student {tuple(student_pooled.shape)}"
        )
    return F.mse_loss(student_pooled, projected)


def _as_batch(student: torch.Tensor, teacher: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if student.ndim == 2:
        student, teacher = student.unsqueeze(0), teacher.unsqueeze(0)
    if student.ndim != 3 or teacher.ndim != 3:
        raise ValueError("patch features must be (N, d) or (B, N, d)")
    if student.shape[:2] != teacher.shape[:2]:
        raise ValueError(
            f"student {tuple(student.shape)} and teacher {tuple(teacher.shape)} disagree on (B, N)"
        )
    if student.shape[1] < 2:
        raise ValueError("patch-level losses need at least 2 patches")
    return student, teacher


def _row_normalize(x: torch.Tensor, who: str) -> torch.Tensor:
    norms = x.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise DegenerateStructureError(f"{who} has a zero-norm patch row")
    return x / norms


def morphology_loss(
    student_patches: torch.Tensor,
    teacher_patches: torch.Tensor,
    adapter_weight: torch.Tensor,
    tau: float = 2.0,
) -> torch.Tensor:
    """Patch InfoNCE: student patch i must pick teacher patch i among the N patches.

    Negatives are the other patches of the same sequence; the result is the
    mean over rows, then over sequences in the batch.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    s, t = _as_batch(student_patches, teacher_patches)
    s_hat = _row_normalize(s, "student")
    t_hat = _row_normalize(adapt(t.detach(), adapter_weight), "adapted teacher")
    z = s_hat @ t_hat.transpose(-1, -2) / tau
    per_row = torch.logsumexp(z, dim=-1) - z.diagonal(dim1=-2, dim2=-1)
    return per_row.mean()


def _normalized_distances(x: torch.Tensor, who: str) -> tuple[torch.Tensor, torch.Tensor]:
    n = x.shape[-2]
    off = ~torch.eye(n, dtype=torch.bool, device=x.device)
    diff = x.unsqueeze(-2) - x.unsqueeze(-3)
    sq = (diff * diff).sum(-1)
    # Keep the diagonal out of sqrt so its zero does not poison the backward pass.
    dist = torch.where(off, torch.where(off, sq, torch.ones_like(sq)).sqrt(), torch.zeros_like(sq))
    mean = dist.sum(dim=(-1, -2)) / (n * (n - 1))
    if bool((mean <= 0).any()):
        raise DegenerateStructureError(f"{who} patch rows are all identical")
    return dist / mean[..., None, None], off


def smooth_l1(x, y, beta: float = 1.0):
    """Quadratic below ``beta``, linear above. Works on floats and tensors."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if isinstance(x, torch.Tensor) or isinstance(y, torch.Tensor):
        r = (torch.as_tensor(x) - torch.as_tensor(y)).abs()
        return torch.where(r < beta, 0.5 * r * r / beta, r - 0.5 * beta)
    r = abs(x - y)
    return 0.5 * r * r / beta if r < beta else r - 0.5 * beta


def rhythm_loss(
    student_patches: torch.Tensor,
    teacher_patches: torch.Tensor,
    adapter_weight: torch.Tensor,
    smooth_l1_beta: float = 1.0,
) -> torch.Tensor:
    """Smooth-L1 match of mean-normalized inter-patch distance matrices."""
    s, t = _as_batch(student_patches, teacher_patches)
    n = s.shape[1]
    d_s, off = _normalized_distances(s, "student")
    d_t, _ = _normalized_distances(adapt(t.detach(), adapter_weight), "adapted teacher")
    pen = smooth_l1(d_s, d_t, smooth_l1_beta) * off
    return (pen.sum(dim=(-1, -2)) / (n * (n - 1))).mean()


def joint_objective(
    teacher_out: ModelOutput,
    student_out: ModelOutput,
    targets: torch.Tensor,
    adapter_weight: torch.Tensor | None,
    config: DistillConfig,
    task: str,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Weighted objective as a differentiable tensor plus its float breakdown.

    Terms with zero weight are skipped and reported as 0.
    """
    if config.gamma > 0 and student_out.patch_features is None:
        raise LossConfigError(
            "gamma > 0 needs patch features; a patch-free student supports global KD only"
        )
    if (config.beta > 0 or config.gamma > 0) and adapter_weight is None:
        raise LossConfigError("feature and patch terms need an adapter")
    zero = student_out.prediction.new_zeros(())
    sup = supervised_loss(student_out.prediction, targets, task)
    kd_pred = (
        prediction_kd_loss(teacher_out.prediction, student_out.prediction, task, config.pred_kd_temp)
        if config.alpha > 0 else zero
    )
    kd_feat = (
        feature_kd_loss(teacher_out.pooled_feature, student_out.pooled_feature, adapter_weight)
        if config.beta > 0 else zero
    )
    if config.gamma > 0:
        mor = morphology_loss(
            student_out.patch_features, teacher_out.patch_features, adapter_weight, config.tau
        )
        rhy = rhythm_loss(
            student_out.patch_features, teacher_out.patch_features, adapter_weight,
            config.smooth_l1_beta,
        )
    else:
        mor = rhy = zero
    loss = sup + config.alpha * kd_pred + config.beta * kd_feat + config.gamma * (mor + rhy)
    parts = [float(v.detach()) for v in (sup, kd_pred, kd_feat, mor, rhy)]
    return loss, LossBreakdown.combine(*parts, config)


def total_loss(
    teacher_out: ModelOutput,
    student_out: ModelOutput,
    targets: torch.Tensor,
    adapter_weight: torch.Tensor | None,
    config: DistillConfig,
    task: str,
) -> LossBreakdown:
    return joint_objective(teacher_out, student_out, targets, adapter_weight, config, task)[1]


def morphology_lower_bound(n: int, tau: float) -> float:
    return math.log(1 + (n - 1) * math.exp(-2 / tau))

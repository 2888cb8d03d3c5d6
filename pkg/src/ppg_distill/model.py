"""Patch transformer and MLP models, the teacher-to-student adapter, checkpoints."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

FAMILIES = ("patch_transformer", "mlp")
TASKS = ("regression", "classification")


@dataclass
class PatchSequence:
    patches: np.ndarray  # (N, P)
    patch_len: int

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]


def patchify(samples, patch_len: int, truncate: bool = False) -> PatchSequence:
    """Split a 1-D signal into non-overlapping, in-order patches of ``patch_len``."""
    x = np.asarray(samples)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D signal, got shape {x.shape}")
    if patch_len < 1:
        raise ValueError("patch_len must be >= 1")
    n, rem = divmod(len(x), patch_len)
    if rem and not truncate:
        raise ValueError(
            f"signal length {len(x)} is not divisible by patch length {patch_len}"
        )
    if n == 0:
        raise ValueError(f"signal length {len(x)} shorter than one patch")
    return PatchSequence(x[: n * patch_len].reshape(n, patch_len), patch_len)


@dataclass
class ModelConfig:
    family: str = "patch_transformer"
    task: str = "regression"
    signal_len: int = 400
    patch_len: int = 40
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    ffn_mult: int = 4
    n_classes: int = 2
    mlp_hidden: tuple[int, ...] = (128, 64)
    # Regression outputs are de-normalized as head(x) * target_std + target_mean;
    # the trainer fills these from the training labels when left as None.
    target_mean: Optional[float] = None
    target_std: Optional[float] = None

    def __post_init__(self):
        self.mlp_hidden = tuple(int(h) for h in self.mlp_hidden)
        self.validate()

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.patch_len < 1:
            raise ValueError("patch_len must be >= 1")
        if self.family == "patch_transformer":
            if self.signal_len % self.patch_len:
                raise ValueError(
                    f"signal_len {self.signal_len} not divisible by patch_len {self.patch_len}"
                )
            if self.d_model % self.n_heads:
                raise ValueError("d_model must be divisible by n_heads")
        elif not self.mlp_hidden:
            raise ValueError("mlp needs at least one hidden layer")
        if self.task == "classification" and self.n_classes < 2:
            raise ValueError("classification needs n_classes >= 2")
        if self.target_std is not None and self.target_std <= 0:
            raise ValueError("target_std must be positive")

    @property
    def n_patches(self) -> int:
        return self.signal_len // self.patch_len

    @property
    def feature_dim(self) -> int:
        return self.d_model if self.family == "patch_transformer" else self.mlp_hidden[-1]

    @property
    def out_dim(self) -> int:
        return 1 if self.task == "regression" else self.n_classes


def teacher_config(**overrides) -> ModelConfig:
    return replace(ModelConfig(d_model=128, n_layers=10, n_heads=4), **overrides)


def student_config(**overrides) -> ModelConfig:
    return replace(ModelConfig(d_model=64, n_layers=2, n_heads=2), **overrides)


def mlp_config(**overrides) -> ModelConfig:
    return replace(ModelConfig(family="mlp", mlp_hidden=(128, 64)), **overrides)


@dataclass
class ModelOutput:
    patch_features: Optional[torch.Tensor]  # (B, N, d) or None for the MLP
    pooled_feature: torch.Tensor  # (B, d)
    prediction: torch.Tensor  # (B,) regression, (B, C) classification logits


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=-1)
        shape = (b, n, self.n_heads, d // self.n_heads)
        q, k, v = (t.view(shape).transpose(1, 2) for t in (q, k, v))
        y = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        return self.proj(y.transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, d_model: int, n_heads: int, ffn_mult: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = CausalSelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(
            nn.Linear(d_model, ffn_mult * d_model),
            nn.GELU(),
            nn.Linear(ffn_mult * d_model, d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ffn(self.ln2(x))


class _Base(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.head = nn.Linear(config.feature_dim, config.out_dim)

    def _predict(self, pooled: torch.Tensor) -> torch.Tensor:
        out = self.head(pooled)
        if self.config.task == "regression":
            scale = 1.0 if self.config.target_std is None else self.config.target_std
            shift = 0.0 if self.config.target_mean is None else self.config.target_mean
            return out.squeeze(-1) * scale + shift
        return out

    def _check_input(self, x: torch.Tensor):
        if x.ndim != 2 or x.shape[1] != self.config.signal_len:
            raise ValueError(
                f"expected input of shape (batch, {self.config.signal_len}), got {tuple(x.shape)}"
            )


class PatchTransformer(_Base):
    def __init__(self, config: ModelConfig):
        super().__init__(config)
        d = config.d_model
        self.embed = nn.Linear(config.patch_len, d)
        self.pos = nn.Parameter(torch.zeros(config.n_patches, d))
        nn.init.normal_(self.pos, std=0.02)
        self.blocks = nn.ModuleList(
            Block(d, config.n_heads, config.ffn_mult) for _ in range(config.n_layers)
        )

    def forward(self, x: torch.Tensor) -> ModelOutput:
        self._check_input(x)
        h = self.embed(x.reshape(x.shape[0], self.config.n_patches, self.config.patch_len))
        h = h + self.pos
        for block in self.blocks:
            h = block(h)
        pooled = h.mean(dim=1)
        return ModelOutput(h, pooled, self._predict(pooled))


class MLP(_Base):
    def __init__(self, config: ModelConfig):
        super().__init__(config)
        layers = []
        width = config.signal_len
        for hidden in config.mlp_hidden:
            layers += [nn.Linear(width, hidden), nn.ReLU()]
            width = hidden
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> ModelOutput:
        self._check_input(x)
        mu = x.mean(dim=1, keepdim=True)
        sd = x.std(dim=1, keepdim=True, unbiased=False).clamp_min(1e-8)
        pooled = self.body((x - mu) / sd)
        return ModelOutput(None, pooled, self._predict(pooled))


def build_model(config: ModelConfig) -> _Base:
    config.validate()
    if config.family == "patch_transformer":
        return PatchTransformer(config)
    return MLP(config)


class Adapter(nn.Module):
    """Bias-free linear map from teacher (d_t) to student (d_s) features."""

    def __init__(self, d_teacher: int, d_student: int, generator: torch.Generator | None = None):
        super().__init__()
        w = torch.randn(d_teacher, d_student, generator=generator) / d_teacher**0.5
        self.weight = nn.Parameter(w)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.weight.shape)

    def forward(self, teacher_features: torch.Tensor) -> torch.Tensor:
        return adapt(teacher_features, self.weight)


def adapt(teacher_features: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    if teacher_features.shape[-1] != weight.shape[0]:
        raise ValueError(
            f"teacher feature dim {teacher_features.shape[-1]} does not match "
            f"adapter input dim {weight.shape[0]}"
        )
    return teacher_features @ weight


def count_params(model: nn.Module, adapter: nn.Module | None = None) -> int:
    total = sum(p.numel() for p in model.parameters() if p.requires_grad)
    if adapter is not None:
        total += sum(p.numel() for p in adapter.parameters() if p.requires_grad)
    return total


def save_checkpoint(path, model: _Base, adapter: Adapter | None = None, meta: dict | None = None):
    payload = {
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
        "adapter": adapter.state_dict() if adapter is not None else None,
        "adapter_shape": adapter.shape if adapter is not None else None,
        "meta": meta or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[_Base, Adapter | None, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    model = build_model(ModelConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    adapter = None
    if payload.get("adapter") is not None:
        adapter = Adapter(*payload["adapter_shape"])
        adapter.load_state_dict(payload["adapter"])
    return model, adapter, payload.get("meta", {})

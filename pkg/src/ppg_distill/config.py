"""Plain-text ``key=value`` run configuration files.

One assignment per line, ``#`` starts a comment, blank lines are ignored and
unknown keys are rejected. Keys cover the model shape and the training
schedule; the task, signal length and seed come from the data and the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .model import ModelConfig, mlp_config, student_config, teacher_config
from .trainer import TrainConfig

MODEL_KEYS = ("family", "patch_len", "d_model", "n_layers", "n_heads", "ffn_mult", "mlp_hidden")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)

    def model_config(self, role: str, **data_fields) -> ModelConfig:
        if self.model.get("family") == "mlp":
            base = mlp_config()
        else:
            base = teacher_config() if role == "teacher" else student_config()
        try:
            return replace(base, **self.model, **data_fields)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _convert(key: str, raw: str):
    if key == "family":
        return raw
    if key == "mlp_hidden":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if key in ("lr_init", "lr_max", "eta_min", "warmup_ratio", "adam_beta1", "adam_beta2",
               "val_fraction"):
        return float(raw)
    return int(raw)


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, str] = {}
    unknown, malformed = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            malformed.append(f"line {lineno}: {line!r}")
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in MODEL_KEYS and key not in TRAIN_KEYS:
            unknown.append(key)
        else:
            values[key] = raw
    problems = []
    if unknown:
        problems.append("unknown keys: " + ", ".join(unknown))
    if malformed:
        problems.append("malformed lines: " + "; ".join(malformed))
    converted = {}
    for key, raw in values.items():
        try:
            converted[key] = _convert(key, raw)
        except ValueError:
            problems.append(f"bad value for {key}: {raw!r}")
    if problems:
        raise ConfigError(f"{source}: " + " | ".join(problems))
    model = {k: v for k, v in converted.items() if k in MODEL_KEYS}
    train = {k: v for k, v in converted.items() if k in TRAIN_KEYS}
    try:
        return RunConfig(model=model, train=TrainConfig(**train))
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), str(path))


def effective_lines(model: ModelConfig, train: TrainConfig, **extra) -> list[str]:
    """``key=value`` lines sufficient to reproduce a run."""
    lines = []
    for f in fields(model):
        v = getattr(model, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name}={v}")
    lines += [f"{f.name}={getattr(train, f.name)}" for f in fields(train)]
    lines += [f"{k}={v}" for k, v in extra.items()]
    return lines

import csv
import math

import pytest
import torch

from ppg_distill.datagen import generate_hr_dataset
from ppg_distill.losses import DistillConfig, LossConfigError
from ppg_distill.model import build_model, mlp_config, save_checkpoint, student_config, teacher_config
from ppg_distill.trainer import (
    REPORT_COLUMNS,
    TrainConfig,
    ablation_sweep,
    distill,
    early_stop_check,
    lr_at_step,
    train_teacher,
)

TINY = dict(d_model=16, n_layers=1, n_heads=2)


@pytest.fixture(scope="module")
def data():
    return generate_hr_dataset(80, seed=3)


@pytest.fixture(scope="module")
def teacher(data):
    torch.manual_seed(0)
    return build_model(teacher_config(n_layers=1, d_model=32, target_mean=100.0, target_std=30.0))


def fast(**kw):
    base = dict(max_epochs=2, batch_size=32, patience=5)
    base.update(kw)
    return TrainConfig(**base)


def test_schedule_endpoints():
    cfg = TrainConfig()
    total = 1000
    warm = round(0.25 * total)
    assert lr_at_step(0, total, cfg) == 1e-5
    assert lr_at_step(warm, total, cfg) == 1e-3
    assert lr_at_step(total - 1, total, cfg) == 1e-6


@pytest.mark.parametrize("total", [2, 3, 7, 64, 1001])
def test_schedule_monotone_phases(total):
    cfg = TrainConfig()
    lrs = [lr_at_step(s, total, cfg) for s in range(total)]
    warm = min(round(0.25 * total), total - 2)
    assert all(a <= b for a, b in zip(lrs[:warm + 1], lrs[1:warm + 1]))
    assert all(a >= b for a, b in zip(lrs[warm:], lrs[warm + 1:]))
    assert lrs[-1] == cfg.eta_min


def test_schedule_midpoint_matches_cosine():
    cfg = TrainConfig()
    total, warm = 101, 25
    step = warm + (total - 1 - warm) // 3
    progress = (step - warm) / (total - 1 - warm)
    expected = cfg.eta_min + 0.5 * (cfg.lr_max - cfg.eta_min) * (1 + math.cos(math.pi * progress))
    assert lr_at_step(step, total, cfg) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("step,total", [(-1, 10), (10, 10), (0, 1)])
def test_schedule_range_errors(step, total):
    with pytest.raises(ValueError):
        lr_at_step(step, total, TrainConfig())


@pytest.mark.parametrize("kwargs", [
    dict(lr_init=1e-2), dict(eta_min=1e-2), dict(warmup_ratio=1.0), dict(patience=0),
])
def test_train_config_invariants(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


@pytest.mark.parametrize("history,patience,expected", [
    ([5, 4, 3], 2, False),
    ([5, 4, 3, 3.1, 3.2, 3.3], 2, True),
    ([5], 1, False),
    ([5], 20, False),
])
def test_early_stop_examples(history, patience, expected):
    assert early_stop_check(history, patience) is expected


def test_early_stop_max_mode_and_ties():
    assert early_stop_check([0.5, 0.7, 0.6, 0.6], 2, "max") is True
    assert early_stop_check([3, 3, 3], 2) is True  # ties are not improvements
    with pytest.raises(ValueError):
        early_stop_check([], 1)


def test_frozen_model_stops_after_two_epochs(data):
    cfg = fast(lr_init=0.0, lr_max=0.0, eta_min=0.0, patience=1, max_epochs=10)
    _, report = train_teacher(data, student_config(**TINY), cfg)
    assert len(report.epochs) == 2
    assert report.best_epoch == 0


def test_teacher_training_is_deterministic(data):
    a = train_teacher(data, student_config(**TINY), fast())[1]
    b = train_teacher(data, student_config(**TINY), fast())[1]
    assert [e.losses.as_dict() for e in a.epochs] == [e.losses.as_dict() for e in b.epochs]
    assert [e.val_metric for e in a.epochs] == [e.val_metric for e in b.epochs]


def test_best_epoch_is_optimum(data):
    _, report = train_teacher(data, student_config(**TINY), fast(max_epochs=4))
    assert report.best_metric == min(e.val_metric for e in report.epochs)


def test_task_mismatch(data):
    with pytest.raises(ValueError):
        train_teacher(data, student_config(task="classification", **TINY), fast())


def test_zero_noise_single_rate_teacher_learns():
    ds = generate_hr_dataset(120, hr_range=(75, 75), rr_jitter=0, noise_std=0, wander_amp=0, seed=0)
    _, report = train_teacher(ds, student_config(**TINY), fast(max_epochs=20))
    assert report.best_metric < 1.0


def test_zero_weights_match_plain_training(data, teacher):
    cfg = fast(max_epochs=3)
    _, plain = train_teacher(data, student_config(**TINY), cfg)
    _, _, kd = distill(teacher, student_config(**TINY), DistillConfig(0, 0, 0), cfg, data)
    for p, k in zip(plain.epochs, kd.epochs):
        assert k.losses.total == pytest.approx(p.losses.total, abs=1e-6)
        assert k.val_metric == pytest.approx(p.val_metric, abs=1e-6)


def test_teacher_frozen_and_breakdown_identity(data, teacher):
    before = {k: v.clone() for k, v in teacher.state_dict().items()}
    cfg = DistillConfig(alpha=0.1, beta=0.1, gamma=1.0)
    _, adapter, report = distill(teacher, student_config(**TINY), cfg, fast(), data)
    for k, v in teacher.state_dict().items():
        assert torch.equal(v, before[k])
    assert adapter.shape == (32, 16)
    for e in report.epochs:
        b = e.losses
        expected = b.sup + 0.1 * b.kd_pred + 0.1 * b.kd_feat + b.mor + b.rhy
        assert b.total == pytest.approx(expected, rel=1e-12)
        assert b.mor > 0 and b.rhy > 0


def test_distill_from_checkpoint_path(tmp_path, data, teacher):
    path = tmp_path / "t.pt"
    save_checkpoint(path, teacher)
    out = tmp_path / "s.pt"
    _, _, report = distill(path, student_config(**TINY), DistillConfig(), fast(max_epochs=1), data, out)
    assert out.exists() and report.checkpoint_path == str(out)


def test_distill_errors(data, teacher):
    with pytest.raises(LossConfigError):
        distill(teacher, mlp_config(), DistillConfig(gamma=0.5), fast(), data)
    with pytest.raises(ValueError):
        distill(teacher, student_config(patch_len=20, **TINY), DistillConfig(), fast(), data)
    short = generate_hr_dataset(10, duration_s=4, seed=0)
    with pytest.raises(ValueError):
        distill(teacher, student_config(**TINY), DistillConfig(), fast(), short)


def test_mlp_student_global_kd(data, teacher):
    _, _, report = distill(teacher, mlp_config(mlp_hidden=(16,)), DistillConfig(gamma=0.0), fast(), data)
    assert all(e.losses.mor == 0 and e.losses.rhy == 0 for e in report.epochs)


def test_report_csv(tmp_path, data):
    _, report = train_teacher(data, student_config(**TINY), fast())
    path = tmp_path / "r.csv"
    report.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert len(rows) == 1 + len(report.epochs)
    assert float(rows[1][-1]) == report.epochs[0].val_metric


def test_ablation_dedupe_and_empty(data, teacher):
    base = DistillConfig()
    table = ablation_sweep(teacher, student_config(**TINY), base, fast(max_epochs=1), data,
                           {"gamma": [0, 1, 1.0]})
    assert [r.value for r in table.rows_] == [0.0, 1.0]
    assert table.params() == ["gamma"]
    assert len(table.series("gamma")) == 2
    empty = ablation_sweep(teacher, student_config(**TINY), base, fast(), data, {})
    assert len(empty) == 0 and empty.rows() == []
    with pytest.raises(ValueError):
        ablation_sweep(teacher, student_config(**TINY), base, fast(), data, {"tau": [1]})
    with pytest.raises(ValueError):
        ablation_sweep(teacher, student_config(**TINY), base, fast(), data, {"beta": [-1]})

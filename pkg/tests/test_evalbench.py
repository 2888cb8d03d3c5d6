import csv
import itertools

import numpy as np
import pytest
import torch

from ppg_distill.datagen import PpgDataset, PpgRecord, TASK_CLASSIFICATION, generate_hr_dataset
from ppg_distill.evalbench import (
    IMPROVEMENT_FOOTER,
    Metrics,
    bench_throughput,
    classification_metrics,
    comparison_rows,
    emit_report,
    evaluate,
    format_improvement,
    regression_metrics,
    relative_improvement,
)
from ppg_distill.model import build_model, count_params, student_config


def test_regression_example():
    m = regression_metrics([1.0, 2.0], [1.0, 4.0])
    assert m.mse == 2.0 and m.mae == 1.0


def test_perfect_classification():
    m = classification_metrics([0, 1, 1, 0], [0, 1, 1, 0])
    assert m.accuracy == 1.0 and m.f1 == 1.0


def test_confusion_example():
    pred = [1, 1, 1, 0] + [0] * 6
    target = [1, 1, 0, 1] + [0] * 6
    m = classification_metrics(pred, target)
    assert m.accuracy == pytest.approx(0.8)
    assert m.f1 == pytest.approx(2 / 3)


def _loop_oracle(tp, fp, fn, tn):
    total = tp + fp + fn + tn
    acc = (tp + tn) / total
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    return acc, (0.0 if p + r == 0 else 2 * p * r / (p + r))


def test_all_small_confusion_matrices():
    checked = 0
    for tp, fp, fn, tn in itertools.product(range(11), repeat=4):
        if tp + fp + fn + tn == 0:
            continue
        pred = [1] * tp + [1] * fp + [0] * fn + [0] * tn
        target = [1] * tp + [0] * fp + [1] * fn + [0] * tn
        m = classification_metrics(pred, target)
        acc, f1 = _loop_oracle(tp, fp, fn, tn)
        assert m.accuracy == acc and m.f1 == f1
        checked += 1
    assert checked == 11 ** 4 - 1


def test_metric_ranges():
    r = np.random.default_rng(0)
    m = regression_metrics(r.normal(size=50), r.normal(size=50))
    assert m.mse >= 0 and m.mae >= 0
    c = classification_metrics(r.integers(0, 2, 50), r.integers(0, 2, 50))
    assert 0 <= c.accuracy <= 1 and 0 <= c.f1 <= 1


def test_evaluate_task_mismatch():
    ds = generate_hr_dataset(4, seed=0)
    model = build_model(student_config(task="classification"))
    with pytest.raises(ValueError):
        evaluate(model, ds)
    with pytest.raises(ValueError):
        evaluate(build_model(student_config()), ds, task="classification")


def test_evaluate_is_pure():
    ds = generate_hr_dataset(6, seed=0)
    model = build_model(student_config(target_mean=90.0, target_std=20.0))
    assert evaluate(model, ds) == evaluate(model, ds)


def test_evaluate_classification_uses_argmax():
    recs = [PpgRecord(np.zeros(400, np.float32), i % 2, 50) for i in range(4)]
    ds = PpgDataset(TASK_CLASSIFICATION, 50, recs)
    model = build_model(student_config(task="classification"))
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.copy_(torch.tensor([0.0, 1.0]))
    m = evaluate(model, ds)
    assert m.accuracy == 0.5 and m.f1 == pytest.approx(2 / 3)


@pytest.mark.parametrize("warmup", [0, 5])
def test_bench_contract(warmup):
    model = build_model(student_config())
    b = bench_throughput(model, batch_size=4, warmup_batches=warmup, measured_batches=3)
    assert b.batches_per_second > 0
    assert b.warmup_batches == warmup and b.measured_batches == 3 and b.batch_size == 4
    assert b.param_count == count_params(model)
    with pytest.raises(ValueError):
        bench_throughput(model, measured_batches=0)


def test_improvement_example():
    value = relative_improvement(8.34, 10.08, lower_is_better=True)
    assert format_improvement(value) == "+17.26%"
    assert format_improvement(relative_improvement(0.9, 0.8, lower_is_better=False)) == "+12.50%"
    assert format_improvement(relative_improvement(11.0, 10.0, True)) == "-10.00%"


def test_report_with_improvement(tmp_path):
    metrics = {"baseline": Metrics(mae=10.08, mse=150.0), "student": Metrics(mae=8.34, mse=120.0)}
    paths = emit_report(tmp_path, metrics=metrics, baseline="baseline")
    rows = list(csv.reader(open(tmp_path / "comparison.csv")))
    assert rows[0] == ["model", "mse", "mse_vs_baseline", "mae", "mae_vs_baseline"]
    assert rows[2][4] == "+17.26%"
    assert IMPROVEMENT_FOOTER in (tmp_path / "summary.txt").read_text()
    assert all(p.exists() for p in paths)


def test_single_row_has_no_improvement_column(tmp_path):
    header, rows = comparison_rows({"only": Metrics(mae=1.0, mse=2.0)})
    assert header == ["model", "mse", "mae"] and len(rows) == 1
    emit_report(tmp_path, metrics={"only": Metrics(mae=1.0, mse=2.0)})
    assert "footer" not in (tmp_path / "summary.txt").read_text()


def test_report_plots_and_efficiency(tmp_path):
    model = build_model(student_config())
    bench = {"student": bench_throughput(model, batch_size=2, warmup_batches=0, measured_batches=2)}
    paths = emit_report(tmp_path, bench=bench)
    names = {p.name for p in paths}
    assert {"efficiency.csv", "summary.txt", "throughput_vs_params.png"} <= names


def test_empty_report_errors(tmp_path):
    with pytest.raises(ValueError):
        emit_report(tmp_path)


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(blocker / "sub", metrics={"a": Metrics(mae=1.0)})

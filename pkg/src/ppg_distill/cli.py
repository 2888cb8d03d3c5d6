"""``ppg-distill`` command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import datagen
from .config import ConfigError, effective_lines, load_config
from .evalbench import bench_throughput, emit_report, evaluate
from .losses import DistillConfig, LossConfigError
from .model import load_checkpoint
from .trainer import TrainingError, ablation_sweep, distill, train_teacher

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _print_header(title: str, lines: list[str]) -> None:
    print(f"# {title} effective configuration")
    for line in lines:
        print(line)
    print("#")


def _data_fields(ds: datagen.PpgDataset) -> dict:
    fields = {"task": ds.task_name, "signal_len": ds.signal_length}
    return fields


def cmd_gen_data(args) -> int:
    if args.task == "hr":
        if args.af_frac is not None:
            raise UsageError("--af-frac only applies to --task af")
        lo = 50.0 if args.hr_lo is None else args.hr_lo
        hi = 150.0 if args.hr_hi is None else args.hr_hi
        jitter = 0.05 if args.jitter is None else args.jitter
        ds = datagen.generate_hr_dataset(
            args.n, (lo, hi), args.duration, args.rate, jitter, args.noise, args.wander, args.seed
        )
        lines = [f"hr_lo={lo}", f"hr_hi={hi}", f"jitter={jitter}"]
    else:
        if args.af_frac is None:
            raise UsageError("--task af requires --af-frac")
        if args.jitter is not None:
            raise UsageError("--jitter is fixed per class for --task af")
        lo = 60.0 if args.hr_lo is None else args.hr_lo
        hi = 110.0 if args.hr_hi is None else args.hr_hi
        ds = datagen.generate_af_dataset(
            args.n, args.af_frac, args.duration, args.rate, (lo, hi), args.noise, args.wander,
            args.seed,
        )
        lines = [f"af_frac={args.af_frac}", f"hr_lo={lo}", f"hr_hi={hi}"]
    _print_header("gen-data", [
        f"task={args.task}", f"n={args.n}", f"duration={args.duration}", f"rate={args.rate}",
        *lines, f"noise={args.noise}", f"wander={args.wander}", f"seed={args.seed}",
    ])
    datagen.write_dataset(ds, args.out)
    summary = f"wrote {len(ds)} records, L={ds.signal_length}, task={ds.task_name} -> {args.out}"
    if ds.task == datagen.TASK_CLASSIFICATION:
        summary += f", positives={int(ds.labels().sum())}"
    print(summary)
    return 0


def _write_run(out: Path, report, header_lines: list[str]) -> None:
    report.write_csv(out / "report.csv")
    best = report.best_metrics.as_dict()
    text = header_lines + [f"best_epoch={report.best_epoch}"]
    text += [f"val_{k}={v!r}" for k, v in best.items()]
    (out / "run.txt").write_text("\n".join(text) + "\n")


def cmd_train_teacher(args) -> int:
    run = load_config(args.config)
    ds = datagen.read_dataset(args.data)
    train_cfg = replace(run.train, seed=args.seed)
    model_cfg = run.model_config("teacher", **_data_fields(ds))
    lines = effective_lines(model_cfg, train_cfg)
    _print_header("train-teacher", lines)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, report = train_teacher(ds, model_cfg, train_cfg, out / "checkpoint.pt")
    _write_run(out, report, effective_lines(model.config, train_cfg))
    print(f"best_epoch={report.best_epoch} val_{report.metric_name}={report.best_metric:.4f} "
          f"epochs={len(report.epochs)} wall_clock_s={report.wall_clock_s:.1f}")
    print(f"checkpoint={out / 'checkpoint.pt'}")
    return 0


def _distill_config(args, student_cfg) -> DistillConfig:
    try:
        return DistillConfig(
            alpha=args.alpha, beta=args.beta, gamma=args.gamma, tau=args.tau,
            pred_kd_temp=args.pred_kd_temp, smooth_l1_beta=args.smooth_l1_beta,
            patch_len=student_cfg.patch_len,
        )
    except LossConfigError as exc:
        raise ConfigError(str(exc)) from exc


def _distill_inputs(args):
    run = load_config(args.student_config)
    ds = datagen.read_dataset(args.data)
    train_cfg = replace(run.train, seed=args.seed)
    student_cfg = run.model_config("student", **_data_fields(ds))
    dcfg = _distill_config(args, student_cfg)
    if dcfg.gamma > 0 and student_cfg.family != "patch_transformer":
        raise ConfigError(
            "--gamma > 0 needs a patch-based student; an MLP student supports global KD only"
        )
    teacher, _, _ = load_checkpoint(args.teacher)
    return ds, teacher, student_cfg, train_cfg, dcfg


def _distill_lines(dcfg: DistillConfig, teacher_path) -> list[str]:
    return [f"{k}={v}" for k, v in vars(dcfg).items()] + [f"teacher={teacher_path}"]


def cmd_distill(args) -> int:
    ds, teacher, student_cfg, train_cfg, dcfg = _distill_inputs(args)
    mode = "global-kd" if dcfg.gamma == 0 else "patch-kd"
    if dcfg.alpha == dcfg.beta == dcfg.gamma == 0:
        mode = "supervised"
    lines = effective_lines(student_cfg, train_cfg) + _distill_lines(dcfg, args.teacher)
    _print_header(f"distill ({mode})", lines)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    student, _, report = distill(teacher, student_cfg, dcfg, train_cfg, ds, out / "checkpoint.pt")
    _write_run(out, report, effective_lines(student.config, train_cfg) + _distill_lines(dcfg, args.teacher))
    print(f"best_epoch={report.best_epoch} val_{report.metric_name}={report.best_metric:.4f} "
          f"epochs={len(report.epochs)} wall_clock_s={report.wall_clock_s:.1f}")
    print(f"checkpoint={out / 'checkpoint.pt'}")
    return 0


def cmd_eval(args) -> int:
    ds = datagen.read_dataset(args.data)
    _print_header("eval", [f"data={args.data}"] + [f"ckpt={c}" for c in args.ckpt])
    results = {}
    for ckpt in args.ckpt:
        model, _, _ = load_checkpoint(ckpt)
        results[_label(ckpt, results)] = evaluate(model, ds)
    for name, m in results.items():
        print(name + " " + " ".join(f"{k}={v:.6g}" for k, v in m.as_dict().items()))
    if args.out:
        for path in emit_report(args.out, metrics=results):
            print(f"wrote {path}")
    return 0


def _label(ckpt: str, taken) -> str:
    p = Path(ckpt)
    name = p.parent.name if p.name == "checkpoint.pt" and p.parent.name else p.stem
    while name in taken:
        name += "_"
    return name


def cmd_bench(args) -> int:
    _print_header("bench", [f"batch={args.batch}", f"warmup={args.warmup}",
                            f"measure={args.measure}", f"seed={args.seed}"]
                  + [f"ckpt={c}" for c in args.ckpt])
    results = {}
    for ckpt in args.ckpt:
        model, _, _ = load_checkpoint(ckpt)
        results[_label(ckpt, results)] = bench_throughput(
            model, args.batch, args.warmup, args.measure, seed=args.seed
        )
    for name, b in results.items():
        print(f"{name} param_count={b.param_count} batches_per_second={b.batches_per_second:.2f} "
              f"batch_size={b.batch_size} warmup_batches={b.warmup_batches} "
              f"measured_batches={b.measured_batches}")
    if args.out:
        for path in emit_report(args.out, bench=results):
            print(f"wrote {path}")
    return 0


def _parse_values(raw: str) -> list[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--values must be comma-separated numbers, got {raw!r}") from exc


def cmd_ablate(args) -> int:
    values = _parse_values(args.values)
    ds, teacher, student_cfg, train_cfg, dcfg = _distill_inputs(args)
    if args.param == "gamma" and any(v > 0 for v in values) and student_cfg.family != "patch_transformer":
        raise ConfigError("gamma > 0 needs a patch-based student")
    lines = effective_lines(student_cfg, train_cfg) + _distill_lines(dcfg, args.teacher)
    lines += [f"sweep_param={args.param}", f"sweep_values={args.values}"]
    _print_header("ablate", lines)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = ablation_sweep(teacher, student_cfg, dcfg, train_cfg, ds, {args.param: values}, out)
    for row in table.rows():
        print(" ".join(f"{h}={v}" for h, v in zip(table.header(), row)))
    runs = {f"{r.param}={r.value:g}": r.report for r in table.rows_}
    for path in emit_report(out, runs=runs, sweep=table):
        print(f"wrote {path}")
    return 0


def _add_distill_flags(p, default_gamma: float):
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--student-config", default=None, help="key=value file (model + schedule)")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=default_gamma)
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--pred-kd-temp", type=float, default=2.0)
    p.add_argument("--smooth-l1-beta", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ppg-distill", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic PPGD dataset")
    p.add_argument("--task", choices=("hr", "af"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--duration", type=float, default=8.0)
    p.add_argument("--rate", type=int, default=50)
    p.add_argument("--hr-lo", type=float)
    p.add_argument("--hr-hi", type=float)
    p.add_argument("--af-frac", type=float)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--jitter", type=float)
    p.add_argument("--wander", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", help="supervised training from scratch")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="key=value file (model + schedule)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="distill a student from a frozen teacher")
    _add_distill_flags(p, default_gamma=1.0)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="task metrics for one or more checkpoints")
    p.add_argument("--ckpt", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="inference throughput and parameter count")
    p.add_argument("--ckpt", nargs="+", required=True)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--measure", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="report directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="one-at-a-time sweep over alpha, beta or gamma")
    _add_distill_flags(p, default_gamma=1.0)
    p.add_argument("--param", choices=("alpha", "beta", "gamma"), required=True)
    p.add_argument("--values", default="0,0.1,0.5,1")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, LossConfigError) as exc:
        print(f"ppg-distill {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, datagen.DatasetFormatError, TrainingError, ValueError) as exc:
        print(f"ppg-distill {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""
Командная строка: preprocess, synth, train, evaluate, ablate, sweep, explain, benchmark

Коды завершения: 0 - успех, 2 - ошибка использования/схемы/конфигурации, 3 - численная ошибка.
"""
import argparse
import itertools
import logging
import subprocess
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from . import __version__, checkpoint
from .checkpoint import sha256_hex
from .config import (PRESETS, VARIANTS, RunConfig, apply_overrides, output_root, resolve)
from .data import Dataset, preprocess, synth_generate
from .exceptions import ConfigError, GesmeError, UsageError
from .metrics import METRICS_CSV, MetricSet, evaluate, importance_report, metrics_table, write_metrics
from .model import ablation_variants, build_variant
from .train import RunReport, fit

logger = logging.getLogger("gesme")

SWEEP_KEYS = ("layers_per_block", "conv_filters", "convrnn_filters", "conv_filter_len", "convrnn_filter_len",
              "gru_hidden", "experts_per_layer")
REPORT_JSON = "report.json"


def version_string() -> str:
    """Версия пакета и, если доступен git, результат git describe"""
    try:
        described = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                                   capture_output=True, text=True, timeout=5)
        if described.returncode == 0 and described.stdout.strip():
            return f"{__version__}+{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def parse_assignments(items: Optional[Sequence[str]]) -> Dict[str, str]:
    """Список 'ключ=значение' -> словарь"""
    values = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"Ожидается ключ=значение, получено '{item}'")
        values[key.strip()] = value.strip()
    return values


def resolve_run(args, dataset: Optional[Dataset] = None) -> RunConfig:
    """Пресет -> файл -> --set -> явные флаги; сценарий берется из набора данных, если он передан"""
    overrides = parse_assignments(args.set)
    if getattr(args, "seed", None) is not None:
        overrides.update({"model.seed": str(args.seed), "train.seed": str(args.seed), "synth.seed": str(args.seed)})
    run = resolve(args.preset, args.config, overrides)
    if dataset is not None:
        run.scenario = dataset.scenario
        run.sync().validate()
    return run


def output_dir(args, name: str) -> Path:
    out = Path(args.out) if args.out else output_root() / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_dataset(args) -> Dataset:
    if not args.dataset:
        raise UsageError("Не указан --dataset")
    return Dataset.load(args.dataset)


# Обучение одного варианта

def train_variant(run: RunConfig, dataset: Dataset, variant: str, out_dir: Path, task: Optional[str] = None,
                  explain: bool = True) -> RunReport:
    """
    Обучает вариант, пишет контрольную точку, loss.csv, metrics.csv, report.json
    и (при наличии слоев взвешивания) CSV важности признаков
    """
    model = build_variant(variant, run.model, dataset.roster(), task)
    report = fit(model, dataset.samples("train"), dataset.samples("val"), run.train, out_dir)
    results = evaluate(model, dataset, "test", report.train_time_s)
    write_metrics(results, out_dir / METRICS_CSV, include_time=False)

    report.config = run.to_dict()
    report.metrics = {t: m.to_dict() for t, m in results.items()}
    report.version = version_string()
    if explain and model.weighting:
        report.importance = importance_report(model, dataset.samples("test")).write(out_dir / "importance")
    report.save(out_dir / REPORT_JSON)
    return report


# Подкоманды

def cmd_preprocess(args) -> int:
    if not args.inputs:
        raise UsageError("Не указан --inputs")
    run = resolve_run(args)
    out = output_dir(args, "dataset")
    dataset = preprocess(run.scenario, args.inputs)
    path = dataset.save(out)
    for name, value in sorted(dataset.counters.items()):
        print(f"{name}: {value}")
    print(f"slots_per_day: {dataset.axis.slots_per_day}, slots: {dataset.axis.n_slots}")
    print(f"manifest: {path} sha256={sha256_hex(path.read_bytes())}")
    return 0


def cmd_synth(args) -> int:
    run = resolve_run(args)
    if args.noise_feature:
        run.synth.noise_feature = True
    out = output_dir(args, "synth")
    dataset = synth_generate(run.scenario, run.synth, out)
    print(f"dataset: {out / 'dataset'} ({dataset.axis.n_slots} интервалов, источники {', '.join(dataset.sources)})")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args)
    run = resolve_run(args, dataset)
    if args.variant == "sm" and not args.task and len(run.model.tasks) > 1:
        raise ConfigError("SM-Net обучается на одной задаче: укажите --task", "task")
    out = output_dir(args, f"train-{args.variant}")
    report = train_variant(run, dataset, args.variant, out, args.task)
    print(metrics_table({t: MetricSet(**m) for t, m in report.metrics.items()}).to_string(index=False))
    print(f"report: {out / REPORT_JSON}")
    return 0


def cmd_evaluate(args) -> int:
    dataset = load_dataset(args)
    if not args.checkpoint:
        raise UsageError("Не указан --checkpoint")
    model = checkpoint.load(args.checkpoint)
    results = evaluate(model, dataset, args.split)
    out = output_dir(args, "evaluate")
    write_metrics(results, out / METRICS_CSV)
    print(metrics_table(results).to_string(index=False))
    return 0


def cmd_ablate(args) -> int:
    dataset = load_dataset(args)
    run = resolve_run(args, dataset)
    out = output_dir(args, "ablate")

    rows, full = [], None
    for removed in ablation_variants():
        name = removed or "none"
        variant_run = apply_overrides(run, {"model.ablation": removed or ""}).sync().validate()
        report = train_variant(variant_run, dataset, "gesme", out / name)
        if full is None:
            full = report
        row = {"removed": name}
        for task, m in report.metrics.items():
            row.update({f"{task}_mae": m["mae"], f"{task}_rmse": m["rmse"], f"{task}_smape": m["smape"]})
            base = full.metrics[task]["rmse"]
            row[f"{task}_rmse_change_pct"] = 100.0 * (m["rmse"] - base) / base if base else 0.0
            row[f"{task}_time_s"] = m["time_s"]
        rows.append(row)
        logger.info(f"Абляция '{name}': лучшая валидационная потеря {report.best_val_loss:.6f}")

    table = pd.DataFrame(rows)
    table.to_csv(out / "ablation.csv", index=False, float_format="%.6f")
    print(table.to_string(index=False))
    return 0


def parse_grid(items: Optional[Sequence[str]]) -> Dict[str, List[str]]:
    """
    --grid ключ=v1,v2,... ; элементы списочных значений разделяются двоеточием
    (conv_filters=25:50,50:100)
    """
    grid = {}
    for key, values in parse_assignments(items).items():
        if key not in SWEEP_KEYS:
            raise ConfigError(f"Ключ '{key}' не поддерживается sweep, допустимы: {', '.join(SWEEP_KEYS)}", key)
        points = [v.replace(":", ",") for v in values.split(",") if v]
        if points:
            grid[key] = points
    if not grid:
        raise ConfigError("Пустая сетка sweep", "grid")
    return grid


def cmd_sweep(args) -> int:
    dataset = load_dataset(args)
    run = resolve_run(args, dataset)
    grid = parse_grid(args.grid)
    out = output_dir(args, "sweep")

    rows = []
    keys = list(grid)
    for point, values in enumerate(itertools.product(*(grid[k] for k in keys))):
        point_run = apply_overrides(run, {f"model.{k}": v for k, v in zip(keys, values)}).sync().validate()
        model = build_variant("gesme", point_run.model, dataset.roster())
        report = fit(model, dataset.samples("train"), dataset.samples("val"), point_run.train, out / f"point{point}")
        row = {"point": point}
        row.update(dict(zip(keys, values)))
        row.update({"final_loss": min(report.train_loss), "best_val_loss": report.best_val_loss,
                    "epochs": report.epochs, "parameters": model.parameter_count()})
        rows.append(row)
        logger.info(f"Точка {point} {dict(zip(keys, values))}: потеря {row['final_loss']:.6f}")

    table = pd.DataFrame(rows)
    table.to_csv(out / "sweep.csv", index=False, float_format="%.6f")
    print(table.to_string(index=False))
    return 0


def cmd_explain(args) -> int:
    dataset = load_dataset(args)
    if not args.checkpoint:
        raise UsageError("Не указан --checkpoint")
    model = checkpoint.load(args.checkpoint)
    out = output_dir(args, "explain")
    paths = importance_report(model, dataset.samples(args.split)).write(out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_benchmark(args) -> int:
    dataset = load_dataset(args)
    run = resolve_run(args, dataset)
    out = output_dir(args, "benchmark")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [run.train.seed]

    rows = []
    for seed in seeds:
        seeded = apply_overrides(run, {"model.seed": str(seed), "train.seed": str(seed)}).sync()
        jobs = [("gesme", None), ("sesme", None), ("sbsm", None)] + [("sm", task) for task in seeded.model.tasks]
        for variant, task in jobs:
            name = variant if task is None else f"sm-{task}"
            report = train_variant(seeded, dataset, variant, out / f"seed{seed}" / name, task, explain=False)
            for t, m in report.metrics.items():
                rows.append({"model": variant, "seed": seed, "task": t, "mae": m["mae"], "rmse": m["rmse"],
                             "smape": m["smape"], "time_s": m["time_s"]})

    table = pd.DataFrame(rows)
    table.to_csv(out / "benchmark.csv", index=False, float_format="%.6f")
    summary = table.groupby(["model", "task"], sort=False)[["mae", "rmse", "smape", "time_s"]].agg(["mean", "std"])
    summary.to_csv(out / "benchmark_summary.csv", float_format="%.6f")
    print(summary.to_string())
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "explain": cmd_explain,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=PRESETS, default=None, help="Пресет конфигурации (по умолчанию table1)")
    common.add_argument("--config", default=None, help="Файл конфигурации 'раздел.ключ = значение'")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="Переопределение ключа конфигурации")
    common.add_argument("--seed", type=int, default=None, help="Зерно модели, обучения и генератора")
    common.add_argument("--out", default=None, help="Каталог результатов (по умолчанию $GESME_OUTPUT_ROOT/<команда>)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="gesme", description="GESME-Net: многозадачный прогноз спроса")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="CSV -> каталог набора данных")
    p.add_argument("--inputs", required=True, help="Каталог <source>/{orders|trajectory,weather,poi}.csv")

    p = sub.add_parser("synth", parents=[common], help="Синтетический сценарий")
    p.add_argument("--noise-feature", action="store_true", help="Добавить i.i.d. шумовой признак")

    p = sub.add_parser("train", parents=[common], help="Обучение варианта модели")
    p.add_argument("--dataset", required=True)
    p.add_argument("--variant", choices=VARIANTS, default="gesme")
    p.add_argument("--task", default=None, help="Задача для SM-Net")

    p = sub.add_parser("evaluate", parents=[common], help="Метрики контрольной точки")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True, help="Путь контрольной точки без расширений")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")

    p = sub.add_parser("ablate", parents=[common], help="Полная модель и пять вариантов без одного блока")
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("sweep", parents=[common], help="Чувствительность к гиперпараметрам")
    p.add_argument("--dataset", required=True)
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2", help=f"Ключи: {', '.join(SWEEP_KEYS)}")

    p = sub.add_parser("explain", parents=[common], help="CSV важности признаков")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")

    p = sub.add_parser("benchmark", parents=[common], help="GESME/SESME/SBSM/SM на одном наборе")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seeds", default=None, help="Список зерен через запятую")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except GesmeError as e:
        logger.error(str(e))
        print(str(e), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())

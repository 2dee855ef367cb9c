"""Command-line surface: run experiments, convert datasets, evaluate saved
models, and aggregate benchmark tables.

Exit codes: 0 success, 2 config error, 3 data error, 4 training failure.
Wall-time fields listed in ``WALL_TIME_FIELDS`` are excluded from report
determinism comparisons; everything else in report.json is bit-stable for
a fixed config.
"""

from __future__ import annotations

import argparse
import csv as csv_module
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import dataset as ds
from . import network
from .hyperopt import enumerate_grid
from .progression import ProgressionConfig, RunReport, run
from .trainer import TrainingError, evaluate

logger = logging.getLogger("pmlp")

WALL_TIME_FIELDS = ("block_time_s", "avg_block_time_s", "total_time_s")

BENCH_COLUMNS = ("name", "accuracy", "unique", "avg_block_s", "total_s")


class ConfigError(Exception):
    """Unusable run configuration."""


@dataclass
class RunConfig:
    dataset_path: str
    dataset_format: str = "csv"
    label_column: str | int = "label"
    num_classes: int | None = None
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0
    standardize: bool = True
    strategy: str = "random"
    subset_fraction: float = 0.1
    subset_size: int | None = None
    block_size: int = 8
    max_blocks_per_layer: int = 20
    max_layers: int = 3
    epsilon: float = 0.001
    patience: int = 3
    num_clusters: int | None = None
    learning_rates: list[float] = field(default_factory=lambda: [0.01])
    weight_decays: list[float] = field(default_factory=lambda: [0.0])
    dropout_rates: list[float] = field(default_factory=lambda: [0.0])
    epochs: list[int] = field(default_factory=lambda: [10])
    fine_tune_epochs: int = 10
    base_seed: int = 0
    activation: str = "relu"
    representation: str = "softmax"
    output_dir: str = "."

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["split_fractions"] = list(self.split_fractions)
        return out


def load_run_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_run_config(raw, source=str(path))


def parse_run_config(raw: dict, source: str = "<dict>") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: config must be a JSON object")
    if "dataset_path" not in raw:
        raise ConfigError(f"{source}: missing required field 'dataset_path'")
    unknown = set(raw) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"{source}: unknown config fields {sorted(unknown)}")
    cfg = RunConfig(**{**raw, "split_fractions": tuple(raw.get("split_fractions", (0.8, 0.1, 0.1)))})
    if cfg.dataset_format not in ("csv", "pnnl"):
        raise ConfigError(f"{source}: dataset_format must be 'csv' or 'pnnl'")
    if len(cfg.split_fractions) != 3 or any(f <= 0 for f in cfg.split_fractions):
        raise ConfigError(f"{source}: split_fractions must be three positive numbers")
    if abs(sum(cfg.split_fractions) - 1.0) > 1e-9:
        raise ConfigError(f"{source}: split_fractions must sum to 1")
    try:
        progression_config(cfg).validate()
        enumerate_grid(cfg.learning_rates, cfg.weight_decays, cfg.dropout_rates, cfg.epochs)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if any(lr <= 0 for lr in cfg.learning_rates):
        raise ConfigError(f"{source}: learning_rates must be positive")
    return cfg


def progression_config(cfg: RunConfig) -> ProgressionConfig:
    return ProgressionConfig(
        block_size=cfg.block_size,
        max_blocks_per_layer=cfg.max_blocks_per_layer,
        max_layers=cfg.max_layers,
        improvement_epsilon=cfg.epsilon,
        patience=cfg.patience,
        subset_fraction=cfg.subset_fraction,
        subset_size=cfg.subset_size,
        strategy=cfg.strategy,
        num_clusters=cfg.num_clusters,
        fine_tune_epochs=cfg.fine_tune_epochs,
        base_seed=cfg.base_seed,
        activation=cfg.activation,
        representation=cfg.representation,
    )


def load_dataset(cfg: RunConfig) -> ds.Dataset:
    path = Path(cfg.dataset_path)
    if not path.exists():
        raise ds.DataError(f"dataset path does not exist: {path}")
    if cfg.dataset_format == "pnnl":
        return ds.load_binary(path)
    return ds.load_csv(path, cfg.label_column, cfg.num_classes)


def report_document(report: RunReport, cfg: RunConfig) -> dict:
    doc = report.to_dict()
    steps = doc.pop("steps")
    return {
        "config": cfg.to_dict(),
        "completed": doc["completed"],
        "fine_tune_combo": doc["fine_tune_combo"],
        "steps": steps,
        "summary": {
            "test_accuracy": doc["test_accuracy"],
            "test_loss": doc["test_loss"],
            "unique_samples_total": doc["unique_samples_total"],
            "avg_block_time_s": doc["avg_block_time_s"],
            "total_time_s": doc["total_time_s"],
            "param_count": doc["param_count"],
        },
    }


def masked_report(doc: dict) -> dict:
    """Copy of a report document with wall-time fields nulled for diffs."""

    def scrub(node):
        if isinstance(node, dict):
            return {
                k: (None if k in WALL_TIME_FIELDS else scrub(v)) for k, v in node.items()
            }
        if isinstance(node, list):
            return [scrub(v) for v in node]
        return node

    return scrub(doc)


def cmd_run(config_path, out_dir=None, seed=None, jobs: int = 1) -> int:
    cfg = load_run_config(config_path)
    if out_dir is not None:
        cfg.output_dir = str(out_dir)
    if seed is not None:
        cfg.base_seed = int(seed)
    return execute_run(cfg, Path(cfg.output_dir), jobs)


def execute_run(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    dataset = load_dataset(cfg)
    data_split = ds.split(dataset, cfg.split_fractions, cfg.split_seed)
    if cfg.standardize:
        dataset, _ = ds.standardize_fit_apply(dataset, data_split)
    grid = enumerate_grid(cfg.learning_rates, cfg.weight_decays, cfg.dropout_rates, cfg.epochs)
    out.mkdir(parents=True, exist_ok=True)

    pcfg = progression_config(cfg)
    pcfg.candidate_jobs = max(jobs, 1)
    try:
        topology, report = run(pcfg, grid, dataset, data_split)
    except TrainingError as exc:
        partial = getattr(exc, "partial_report", None)
        if partial is not None:
            _write_json(out / "report.json", report_document(partial, cfg))
        raise
    _write_json(out / "report.json", report_document(report, cfg))
    network.save_model(topology, out / "model.pmlp")
    test_set = ds.Dataset(
        dataset.features[data_split.test_idx],
        dataset.labels[data_split.test_idx],
        dataset.num_classes,
    )
    ds.save_binary(test_set, out / "test_split.pnnl")
    logger.info(
        "run finished: steps=%d test_accuracy=%.4f params=%d -> %s",
        len(report.steps), report.test_accuracy, report.param_count, out,
    )
    return 0


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_convert(csv_path, label_column, out_path) -> int:
    label: str | int
    try:
        label = int(label_column)
    except (TypeError, ValueError):
        label = label_column
    dataset = ds.load_csv(csv_path, label)
    ds.save_binary(dataset, out_path)
    logger.info("wrote %s (N=%d, D=%d, K=%d)", out_path, dataset.n, dataset.d, dataset.num_classes)
    return 0


def cmd_evaluate(model_path, data_path, label_column="label") -> tuple[float, float]:
    try:
        topology = network.load_model(model_path)
    except (ValueError, OSError) as exc:
        raise ds.DataError(f"cannot load model: {exc}") from None
    path = Path(data_path)
    if not path.exists():
        raise ds.DataError(f"dataset path does not exist: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    dataset = ds.load_binary(path) if magic == ds.PNNL_MAGIC else ds.load_csv(path, label_column)
    if dataset.d != topology.input_dim:
        raise ds.DataError(
            f"dimension mismatch: model expects D={topology.input_dim}, dataset has D={dataset.d}"
        )
    if dataset.num_classes > topology.num_classes:
        raise ds.DataError(
            f"dataset has {dataset.num_classes} classes, model only {topology.num_classes}"
        )
    accuracy, loss = evaluate(topology, dataset.features, dataset.labels)
    print(f"accuracy={accuracy:.12g} loss={loss:.12g}")
    return accuracy, loss


def cmd_bench(config_dir, out_dir=None, jobs: int = 1) -> int:
    """Aggregate one table row per config or completed report in a directory."""
    folder = Path(config_dir)
    if not folder.is_dir():
        raise ds.DataError(f"not a directory: {folder}")
    out = Path(out_dir) if out_dir is not None else folder
    entries = sorted(folder.glob("*.json"), key=lambda p: p.stem)

    documents: dict[str, dict] = {}
    pending: list[tuple[str, RunConfig]] = []
    for path in entries:
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ds.DataError(f"{path}: unreadable: {exc}") from None
        if isinstance(doc, dict) and "summary" in doc:
            documents[path.stem] = doc
        else:
            pending.append((path.stem, parse_run_config(doc, source=str(path))))

    def run_one(item: tuple[str, RunConfig]) -> tuple[str, dict]:
        name, cfg = item
        run_out = out / name
        execute_run(cfg, run_out)
        return name, json.loads((run_out / "report.json").read_text())

    if pending:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                for name, doc in pool.map(run_one, pending):
                    documents[name] = doc
        else:
            for item in pending:
                name, doc = run_one(item)
                documents[name] = doc

    rows = []
    for name in sorted(documents):
        summary = documents[name].get("summary", {})
        rows.append(
            {
                "name": name,
                "accuracy": summary.get("test_accuracy"),
                "unique": summary.get("unique_samples_total"),
                "avg_block_s": summary.get("avg_block_time_s"),
                "total_s": summary.get("total_time_s"),
            }
        )

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="") as fh:
        writer = csv_module.DictWriter(fh, fieldnames=list(BENCH_COLUMNS))
        writer.writeheader()
        writer.writerows(rows)
    print(format_bench_table(rows))
    return 0


def format_bench_table(rows: list[dict]) -> str:
    def fmt(value, spec: str) -> str:
        return "-" if value is None else format(value, spec)

    header = f"{'name':<24} {'accuracy':>10} {'unique':>8} {'avg_block_s':>12} {'total_s':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['name']:<24} {fmt(r['accuracy'], '>10.4f')} {fmt(r['unique'], '>8d')} "
            f"{fmt(r['avg_block_s'], '>12.4f')} {fmt(r['total_s'], '>10.3f')}"
        )
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmlp",
        description="Progressive MLP training with subset sampling and per-step hyperparameter selection",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress progress logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment from a JSON config")
    p_run.add_argument("--config", required=True, help="path to the run config")
    p_run.add_argument("--out", default=None, help="output directory override")
    p_run.add_argument("--seed", type=int, default=None, help="base seed override")
    p_run.add_argument("--jobs", type=int, default=1)

    p_conv = sub.add_parser("convert", help="convert a CSV dataset to the PNNL binary format")
    p_conv.add_argument("csv")
    p_conv.add_argument("label_column")
    p_conv.add_argument("out")

    p_eval = sub.add_parser("evaluate", help="evaluate a saved model on a dataset")
    p_eval.add_argument("model")
    p_eval.add_argument("data")
    p_eval.add_argument("--label-column", default="label")

    p_bench = sub.add_parser("bench", help="run/aggregate a directory of configs or reports")
    p_bench.add_argument("config_dir")
    p_bench.add_argument("--out", default=None)
    p_bench.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s"
    )
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, args.seed, args.jobs)
        if args.command == "convert":
            return cmd_convert(args.csv, args.label_column, args.out)
        if args.command == "evaluate":
            cmd_evaluate(args.model, args.data, args.label_column)
            return 0
        if args.command == "bench":
            return cmd_bench(args.config_dir, args.out, args.jobs)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ds.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

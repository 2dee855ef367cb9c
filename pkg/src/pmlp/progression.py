"""The growth loop: grow a block, sample a subset, train one candidate per
hyperparameter combination, install the validation winner, and repeat until
the layer saturates; then open a new layer or stop, fine-tune on the full
train split, and report.

Derived RNG streams per purpose keep the whole run reproducible:
``derive([step, h])`` for candidate h, ``derive([step, TAG])`` for block
init and subset selection, with tags far above any realistic grid size.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset, DataSplit
from .hyperopt import HyperGrid, run_candidates, select_best
from .network import Topology
from .numerics import RngState
from .sampling import (
    SelectionContext,
    Subset,
    UniqueTracker,
    compute_context,
    select_cluster_top_loss,
    select_random,
    select_top_loss,
)
from .trainer import SplitArrays, TrainingError, evaluate, fine_tune

STRATEGIES = ("random", "top_loss", "cluster_top_loss")

TAG_BLOCK_INIT = 1 << 20
TAG_SELECT = (1 << 20) + 1
TAG_FINE_TUNE = (1 << 20) + 2


@dataclass
class ProgressionConfig:
    block_size: int = 8
    max_blocks_per_layer: int = 20
    max_layers: int = 3
    improvement_epsilon: float = 0.001
    patience: int = 3
    subset_fraction: float = 0.1
    subset_size: int | None = None  # absolute M overrides the fraction
    strategy: str = "random"
    num_clusters: int | None = None  # defaults to the class count
    fine_tune_epochs: int = 10
    base_seed: int = 0
    activation: str = "relu"
    representation: str = "softmax"
    candidate_jobs: int = 1

    def validate(self) -> None:
        if self.block_size < 1:
            raise ValueError("block_size must be at least 1")
        if self.max_layers < 1 or self.max_blocks_per_layer < 1:
            raise ValueError("layer and block caps must be at least 1")
        if self.subset_size is None and not 0.0 < self.subset_fraction <= 1.0:
            raise ValueError("subset_fraction must be in (0, 1]")
        if self.subset_size is not None and self.subset_size < 1:
            raise ValueError("subset_size must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.improvement_epsilon < 0:
            raise ValueError("improvement_epsilon must be non-negative")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.fine_tune_epochs < 0:
            raise ValueError("fine_tune_epochs must be non-negative")


@dataclass
class StepRecord:
    step: int
    layer_index: int
    chosen_index: int
    chosen_hyperparams: dict
    subset_indices: list[int]
    val_accuracy_before: float
    val_accuracy_after: float
    unique_count: int
    block_time_s: float
    candidate_indices: list[int]
    candidate_val_accuracies: list[float]
    candidate_val_losses: list[float]


@dataclass
class RunReport:
    steps: list[StepRecord] = field(default_factory=list)
    test_accuracy: float | None = None
    test_loss: float | None = None
    total_time_s: float = 0.0
    avg_block_time_s: float = 0.0
    unique_samples_total: int = 0
    param_count: int = 0
    fine_tune_combo: int | None = None
    completed: bool = False
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def layer_saturated(history: list[float], epsilon: float, patience: int) -> bool:
    """True when the last ``patience`` improvements over the running best
    are all below ``epsilon``.

    ``history`` is a sequence of validation accuracies; the first entry only
    seeds the running best.
    """
    if not history:
        raise ValueError("history must be non-empty")
    if len(history) < patience + 1:
        return False
    best = history[0]
    improvements = []
    for value in history[1:]:
        improvements.append(value - best)
        if value > best:
            best = value
    return all(imp < epsilon for imp in improvements[-patience:])


def subset_cardinality(config: ProgressionConfig, n_train: int) -> int:
    if config.subset_size is not None:
        return min(config.subset_size, n_train)
    return min(n_train, int(math.ceil(config.subset_fraction * n_train - 1e-9)))


def _select(
    config: ProgressionConfig, ctx: SelectionContext, m: int, step: int
) -> Subset:
    if config.strategy == "random":
        picked = select_random(len(ctx.per_sample_loss), m, ctx.rng)
    elif config.strategy == "top_loss":
        picked = select_top_loss(ctx, m)
    else:
        picked = select_cluster_top_loss(ctx, m)
    return Subset(picked.indices, step)


def build_split_arrays(dataset: Dataset, data_split: DataSplit) -> SplitArrays:
    f, y = dataset.features, dataset.labels
    return SplitArrays(
        f[data_split.train_idx], y[data_split.train_idx],
        f[data_split.val_idx], y[data_split.val_idx],
        f[data_split.test_idx], y[data_split.test_idx],
    )


def run(
    config: ProgressionConfig,
    grid: HyperGrid,
    dataset: Dataset,
    data_split: DataSplit,
) -> tuple[Topology, RunReport]:
    """Execute the full progression and return the fine-tuned topology plus
    the run report. On a failed step, the partial report is attached to the
    raised ``TrainingError`` as ``partial_report``."""
    config.validate()
    data = build_split_arrays(dataset, data_split)
    n_train = len(data.train_y)
    num_clusters = config.num_clusters or dataset.num_classes
    m = subset_cardinality(config, n_train)

    base = RngState(config.base_seed)
    topology = Topology(dataset.d, dataset.num_classes, activation=config.activation)
    tracker = UniqueTracker()
    report = RunReport(config={**asdict(config), "subset_cardinality": m})
    started = time.perf_counter()

    try:
        _progress(config, grid, data, topology, tracker, report, base, n_train, num_clusters, m)
        combo = _modal_combo([r.chosen_index for r in report.steps])
        report.fine_tune_combo = combo
        fine_tune(
            topology, data, grid[combo], config.fine_tune_epochs,
            base.derive([0, TAG_FINE_TUNE]),
        )
        report.test_accuracy, report.test_loss = evaluate(topology, data.test_x, data.test_y)
        report.completed = True
    except TrainingError as exc:
        _finalize(report, topology, started)
        exc.partial_report = report  # type: ignore[attr-defined]
        raise
    _finalize(report, topology, started)
    return topology, report


def _progress(config, grid, data, topology, tracker, report, base, n_train, num_clusters, m):
    pending_new_layer = False
    layer_history: list[float] = []
    best_val = 0.0
    step = 0
    while True:
        step += 1
        if step == 1:
            topology.start_new_layer(config.block_size, base.derive([step, TAG_BLOCK_INIT]))
            val_before, _ = evaluate(topology, data.val_x, data.val_y)
            best_val = val_before
            layer_history = [val_before]
            ctx = _context(config, topology, data, base, step, num_clusters)
        else:
            ctx = _context(config, topology, data, base, step, num_clusters)
            val_before = report.steps[-1].val_accuracy_after
            if pending_new_layer:
                topology.start_new_layer(config.block_size, base.derive([step, TAG_BLOCK_INIT]))
                layer_history = [best_val]
                pending_new_layer = False
            else:
                topology.add_block(config.block_size, base.derive([step, TAG_BLOCK_INIT]))

        subset = _select(config, ctx, m, step)
        results = run_candidates(
            topology, subset, grid, data, base, step, jobs=config.candidate_jobs
        )
        winner = select_best(results)
        chosen = results[winner]
        _install(topology, chosen.params)
        tracker.track(subset)

        layer_index = len(topology.layers) - 1
        report.steps.append(
            StepRecord(
                step=step,
                layer_index=layer_index,
                chosen_index=chosen.candidate_index,
                chosen_hyperparams=asdict(grid[chosen.candidate_index]),
                subset_indices=[int(i) for i in subset.indices],
                val_accuracy_before=val_before,
                val_accuracy_after=chosen.val_accuracy,
                unique_count=tracker.per_step_counts[-1],
                block_time_s=sum(r.train_time for r in results),
                candidate_indices=[r.candidate_index for r in results],
                candidate_val_accuracies=[r.val_accuracy for r in results],
                candidate_val_losses=[r.val_loss for r in results],
            )
        )
        layer_history.append(chosen.val_accuracy)
        best_val = max(best_val, chosen.val_accuracy)

        blocks_here = len(topology.layers[-1].blocks)
        saturated = blocks_here >= config.max_blocks_per_layer or layer_saturated(
            layer_history, config.improvement_epsilon, config.patience
        )
        if saturated:
            if len(topology.layers) < config.max_layers:
                pending_new_layer = True
            else:
                return


def _context(config, topology, data, base, step, num_clusters):
    return compute_context(
        topology,
        data.train_x,
        data.train_y,
        base.derive([step, TAG_SELECT]),
        num_clusters,
        config.representation,
    )


def _install(topology, params: dict[str, np.ndarray]) -> None:
    block = topology.trainable_block()
    block.weight[...] = params["block_weight"]
    block.bias[...] = params["block_bias"]
    topology.output_weight[...] = params["output_weight"]
    topology.output_bias[...] = params["output_bias"]
    block.frozen = True


def _modal_combo(chosen: list[int]) -> int:
    counts = Counter(chosen)
    return min(counts, key=lambda h: (-counts[h], h))


def _finalize(report: RunReport, topology: Topology, started: float) -> None:
    report.total_time_s = time.perf_counter() - started
    block_times = [r.block_time_s for r in report.steps]
    report.avg_block_time_s = float(np.mean(block_times)) if block_times else 0.0
    report.unique_samples_total = report.steps[-1].unique_count if report.steps else 0
    report.param_count = topology.param_count()

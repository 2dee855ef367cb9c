"""Hyperparameter grid and per-step online selection.

Each progression step trains one candidate per grid combination, all from
the same subset and the same initial block parameters, and keeps whichever
scores best on the validation split. Candidates own derived RNG streams,
so execution order (serial or threaded) cannot change any result.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .numerics import RngState
from .trainer import SplitArrays, TrainingError, evaluate, optimize_block


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float
    weight_decay: float = 0.0
    dropout_rate: float = 0.0
    epochs: int = 1

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be a positive count")


@dataclass(frozen=True)
class HyperGrid:
    combos: tuple[HyperParams, ...]

    def __len__(self) -> int:
        return len(self.combos)

    def __getitem__(self, h: int) -> HyperParams:
        return self.combos[h]


def enumerate_grid(
    learning_rates,
    weight_decays=(0.0,),
    dropout_rates=(0.0,),
    epochs=(1,),
) -> HyperGrid:
    """Cartesian product in a fixed order: learning rate varies slowest,
    then weight decay, then dropout, then epochs."""
    lists = [list(learning_rates), list(weight_decays), list(dropout_rates), list(epochs)]
    for name, values in zip(("learning_rates", "weight_decays", "dropout_rates", "epochs"), lists):
        if not values:
            raise ValueError(f"{name} must be non-empty")
    combos = tuple(
        HyperParams(lr, wd, dr, ep)
        for lr, wd, dr, ep in itertools.product(*lists)
    )
    if len(set(combos)) != len(combos):
        raise ValueError("duplicate hyperparameter combinations in the grid")
    return HyperGrid(combos)


@dataclass
class CandidateResult:
    candidate_index: int
    params: dict[str, np.ndarray]  # trained block + output layer snapshot
    val_accuracy: float
    val_loss: float
    train_time: float


def run_candidates(
    topology,
    subset,
    grid: HyperGrid,
    data: SplitArrays,
    base_rng: RngState,
    step: int,
    jobs: int = 1,
    execution_order: list[int] | None = None,
) -> list[CandidateResult]:
    """Train one candidate per grid combo; results are ordered by combo
    index regardless of execution order.

    Every candidate starts from a private copy of the same topology (same
    initial block draws) and consumes the stream derive(base, [step, h]).
    A step fails only when every candidate fails.
    """
    order = list(execution_order) if execution_order is not None else list(range(len(grid)))
    if sorted(order) != list(range(len(grid))):
        raise ValueError("execution_order must be a permutation of the grid")

    def train_one(h: int) -> CandidateResult | Exception:
        try:
            clone = topology.clone()
            rng = base_rng.derive([step, h])
            clone, stats = optimize_block(
                clone, subset, grid[h], data.train_x, data.train_y, rng
            )
            accuracy, loss = evaluate(clone, data.val_x, data.val_y)
            if not (np.isfinite(accuracy) and np.isfinite(loss)):
                raise TrainingError(f"candidate {h}: non-finite validation metrics")
            return CandidateResult(h, _snapshot(clone), accuracy, loss, stats.wall_time)
        except Exception as exc:  # noqa: BLE001 - reported per candidate
            return exc

    results: list[CandidateResult | Exception] = [None] * len(grid)  # type: ignore[list-item]
    if jobs <= 1:
        for h in order:
            results[h] = train_one(h)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for h, res in zip(order, pool.map(train_one, order)):
                results[h] = res

    failures = [r for r in results if isinstance(r, Exception)]
    if len(failures) == len(grid):
        raise TrainingError(f"all {len(grid)} candidates failed: {failures[0]}") from failures[0]
    ok = [r for r in results if isinstance(r, CandidateResult)]
    if failures:
        # partial failures tolerated; surviving candidates compete
        ok.sort(key=lambda r: r.candidate_index)
    return ok


def _snapshot(topology) -> dict[str, np.ndarray]:
    block = topology.trainable_block()
    return {
        "block_weight": block.weight.copy(),
        "block_bias": block.bias.copy(),
        "output_weight": topology.output_weight.copy(),
        "output_bias": topology.output_bias.copy(),
    }


def select_best(results: list[CandidateResult]) -> int:
    """Index into ``results`` of the winner: highest validation accuracy,
    ties to the lower loss, remaining ties to the lower position."""
    if not results:
        raise ValueError("no candidate results")
    best = 0
    for i in range(1, len(results)):
        r, b = results[i], results[best]
        if r.val_accuracy > b.val_accuracy or (
            r.val_accuracy == b.val_accuracy and r.val_loss < b.val_loss
        ):
            best = i
    return best

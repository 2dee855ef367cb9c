"""Block optimization over a sampled subset, evaluation, and final joint
fine-tuning.

``optimize_block`` touches only the subset rows of the train split (one
gather per array), trains the newest block plus the output layer with
mini-batch Adam, and leaves every frozen block bit-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import network
from .numerics import RngState, adam_init, adam_step, softmax_cross_entropy

BATCH_SIZE_CAP = 64


class TrainingError(Exception):
    """Optimization failed (non-finite loss or no viable candidate)."""


@dataclass(frozen=True)
class SplitArrays:
    """Standardized feature/label arrays for the three splits."""

    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass
class TrainStats:
    initial_subset_loss: float
    final_subset_loss: float
    epochs_run: int
    wall_time: float


def optimize_block(
    topology,
    subset,
    hp,
    train_features,
    train_labels,
    rng: RngState,
) -> tuple[object, TrainStats]:
    """Train the newest block and the output layer on the subset rows only.

    Mini-batches of min(64, M) with a seeded per-epoch reshuffle; dropout
    (inverted scaling) on the trainable block's activations; decoupled
    weight decay on the trainable parameters only.
    """
    block = topology.trainable_block()
    if block is None:
        raise TrainingError("no trainable block")
    if len(subset) == 0:
        raise TrainingError("empty subset")
    started = time.perf_counter()

    idx = np.asarray(subset.indices)
    x = np.asarray(train_features[idx], dtype=np.float64)
    y = np.asarray(train_labels[idx], dtype=np.int64)
    m = len(idx)

    params = {
        "block_weight": block.weight,
        "block_bias": block.bias,
        "output_weight": topology.output_weight,
        "output_bias": topology.output_bias,
    }
    state = adam_init(params)
    initial_loss = network.block_training_loss(topology, x, y)

    batch = min(BATCH_SIZE_CAP, m)
    for _ in range(hp.epochs):
        order = rng.permutation(m)
        for start in range(0, m, batch):
            rows = order[start : start + batch]
            xb, yb = x[rows], y[rows]
            mask = None
            if hp.dropout_rate > 0.0:
                draws = rng.uniform_array((len(rows), block.width))
                mask = (draws >= hp.dropout_rate).astype(np.float64)
            loss, grads = network.block_backward(
                topology, xb, yb, mask, hp.dropout_rate
            )
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss {loss}")
            adam_step(params, grads, state, hp.learning_rate, hp.weight_decay)
    final_loss = network.block_training_loss(topology, x, y)
    wall = max(time.perf_counter() - started, 1e-9)
    return topology, TrainStats(initial_loss, final_loss, hp.epochs, wall)


def evaluate(topology, features, labels) -> tuple[float, float]:
    """(accuracy, mean cross-entropy); deterministic, no dropout."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    logits, _, _ = network.forward(topology, features)
    loss, _, _ = softmax_cross_entropy(logits, labels)
    accuracy = float((logits.argmax(axis=1) == labels).mean())
    return accuracy, loss


def fine_tune(
    topology,
    data: SplitArrays,
    hp,
    epochs: int,
    rng: RngState,
) -> object:
    """Joint training of every parameter on the full train split.

    Validation-checkpointed: returns the parameter snapshot with the best
    validation accuracy seen, including the starting point (ties keep the
    earlier snapshot). All blocks come back frozen.
    """
    for layer in topology.layers:
        for block in layer.blocks:
            block.frozen = False

    params: dict[str, np.ndarray] = {
        "output_weight": topology.output_weight,
        "output_bias": topology.output_bias,
    }
    for li, layer in enumerate(topology.layers):
        for bi, block in enumerate(layer.blocks):
            params[f"layer{li}_block{bi}_weight"] = block.weight
            params[f"layer{li}_block{bi}_bias"] = block.bias
    state = adam_init(params)

    x, y = data.train_x, data.train_y
    n = len(y)
    batch = min(BATCH_SIZE_CAP, n)
    best_acc, _ = evaluate(topology, data.val_x, data.val_y)
    best_params = {k: p.copy() for k, p in params.items()}

    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            rows = order[start : start + batch]
            xb, yb = x[rows], y[rows]
            masks = None
            if hp.dropout_rate > 0.0:
                masks = [
                    (rng.uniform_array((len(rows), layer.width)) >= hp.dropout_rate).astype(np.float64)
                    for layer in topology.layers
                ]
            loss, grads = network.full_backward(topology, xb, yb, masks, hp.dropout_rate)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite fine-tune loss {loss}")
            adam_step(params, grads, state, hp.learning_rate, hp.weight_decay)
        accuracy, _ = evaluate(topology, data.val_x, data.val_y)
        if accuracy > best_acc:
            best_acc = accuracy
            best_params = {k: p.copy() for k, p in params.items()}

    for key, snap in best_params.items():
        params[key][...] = snap
    topology.freeze_all()
    return topology

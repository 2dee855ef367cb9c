from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pmlp.dataset import Dataset


def make_blobs(
    n: int,
    d: int,
    k: int,
    seed: int,
    separation: float = 4.0,
    label_noise: float = 0.0,
) -> Dataset:
    """Gaussian blobs with unit within-class stddev and all pairwise class
    center distances exactly ``separation``; optional label noise flips the
    given fraction of labels to a different uniform class."""
    assert d >= k, "need one orthogonal axis per class"
    rng = np.random.default_rng(seed)
    centers = np.zeros((k, d))
    centers[np.arange(k), np.arange(k)] = separation / np.sqrt(2.0)
    labels = rng.integers(0, k, size=n)
    features = centers[labels] + rng.standard_normal((n, d))
    if label_noise > 0.0:
        flip = rng.random(n) < label_noise
        offsets = rng.integers(1, k, size=n)
        labels = np.where(flip, (labels + offsets) % k, labels)
    return Dataset(features, labels.astype(np.int64), k)


@pytest.fixture(scope="session")
def toy_csv(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("data") / "toy.csv"
    rows = ["f0,f1,label"]
    rng = np.random.default_rng(5)
    for i in range(60):
        label = i % 3
        x = rng.standard_normal(2) + 3.0 * np.array([label == 1, label == 2])
        rows.append(f"{x[0]:.6f},{x[1]:.6f},{label}")
    path.write_text("\n".join(rows) + "\n")
    return path

"""Per-step subset selection over the train split.

Three strategies: uniform random without replacement, the samples with the
highest per-sample loss under the previous step's network, and the same
top-loss rule applied per k-means cluster of the network's outputs. Every
strategy is a pure function of (context, M, rng) and every tie breaks
toward the lower index so results are portable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import Topology, forward
from .numerics import RngState, softmax_cross_entropy


@dataclass(frozen=True)
class Subset:
    indices: np.ndarray  # sorted unique positions into the train split
    step: int = 0

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64)
        object.__setattr__(self, "indices", idx)
        if len(np.unique(idx)) != len(idx):
            raise ValueError("subset indices must be unique")
        if len(idx) and ((idx != np.sort(idx)).any() or idx.min() < 0):
            raise ValueError("subset indices must be sorted and non-negative")

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class SelectionContext:
    """Per-sample losses and output representations of the previous network."""

    per_sample_loss: np.ndarray
    representations: np.ndarray
    rng: RngState
    num_clusters: int


@dataclass
class UniqueTracker:
    """Cumulative count of distinct train indices selected so far."""

    seen: set[int] = field(default_factory=set)
    per_step_counts: list[int] = field(default_factory=list)

    def track(self, subset: Subset) -> "UniqueTracker":
        self.seen.update(int(i) for i in subset.indices)
        self.per_step_counts.append(len(self.seen))
        return self


def compute_context(
    topology: Topology,
    train_features: np.ndarray,
    train_labels: np.ndarray,
    rng: RngState,
    num_clusters: int,
    representation: str = "softmax",
) -> SelectionContext:
    """One inference pass over the train split; no dropout."""
    if representation not in ("softmax", "logits"):
        raise ValueError(f"unknown representation {representation!r}")
    logits, _, probs = forward(topology, train_features)
    _, _, per_sample = softmax_cross_entropy(logits, train_labels)
    reps = probs if representation == "softmax" else logits
    return SelectionContext(per_sample, reps, rng, num_clusters)


def select_random(n_train: int, m: int, rng: RngState) -> Subset:
    """Uniform M-subset without replacement (partial Fisher-Yates)."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if m >= n_train:
        return Subset(np.arange(n_train))
    picked = rng.partial_shuffle(n_train, m)[:m]
    return Subset(np.sort(picked))


def _by_loss_desc(losses: np.ndarray) -> np.ndarray:
    """Indices ordered by loss descending, ties toward the lower index."""
    return np.argsort(-losses, kind="stable")


def select_top_loss(ctx: SelectionContext, m: int) -> Subset:
    if m < 1:
        raise ValueError("m must be at least 1")
    order = _by_loss_desc(ctx.per_sample_loss)
    return Subset(np.sort(order[: min(m, len(order))]))


def select_cluster_top_loss(ctx: SelectionContext, m_total: int) -> Subset:
    """Top losses per cluster with per-cluster budget floor(M/C); any
    shortfall is filled from the globally highest-loss leftovers."""
    c = ctx.num_clusters
    if m_total < c:
        raise ValueError(f"M={m_total} must be at least num_clusters={c}")
    n = len(ctx.per_sample_loss)
    per_cluster = m_total // c
    assignments, _ = kmeans(ctx.representations, c, ctx.rng)
    chosen: list[np.ndarray] = []
    for cluster in range(c):
        members = np.flatnonzero(assignments == cluster)
        if not len(members):
            continue
        ranked = members[_by_loss_desc(ctx.per_sample_loss[members])]
        chosen.append(ranked[: min(per_cluster, len(ranked))])
    selected = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
    want = min(m_total, n)
    if len(selected) < want:
        mask = np.ones(n, dtype=bool)
        mask[selected] = False
        leftovers = np.flatnonzero(mask)
        ranked = leftovers[_by_loss_desc(ctx.per_sample_loss[leftovers])]
        selected = np.concatenate([selected, ranked[: want - len(selected)]])
    return Subset(np.sort(selected))


def kmeans(
    points: np.ndarray,
    num_clusters: int,
    rng: RngState,
    max_iters: int = 100,
    objective_history: list[float] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding, squared Euclidean metric.

    Deterministic for a fixed rng. Empty clusters re-seed to the point
    farthest from its own centroid. If ``objective_history`` is a list it
    collects the within-cluster sum of squares after each assignment step.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if num_clusters < 1 or n < num_clusters:
        raise ValueError(f"need n >= C >= 1, got n={n}, C={num_clusters}")

    centroids = _plus_plus_seed(points, num_clusters, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = _pairwise_sq(points, centroids)
        new_assign = d2.argmin(axis=1)
        if objective_history is not None:
            objective_history.append(float(d2[np.arange(n), new_assign].sum()))
        if (new_assign == assignments).all():
            break
        assignments = new_assign

        fresh = np.empty_like(centroids)
        empties = []
        for c in range(num_clusters):
            members = points[assignments == c]
            if len(members):
                fresh[c] = members.mean(axis=0)
            else:
                empties.append(c)
        if empties:
            own = ((points - fresh[assignments]) ** 2).sum(axis=1)
            candidates = np.argsort(-own, kind="stable")
            used: set[int] = set()
            for c in empties:
                pick = next(int(i) for i in candidates if int(i) not in used)
                used.add(pick)
                fresh[c] = points[pick]
        centroids = fresh
    return assignments, centroids


def _plus_plus_seed(points: np.ndarray, k: int, rng: RngState) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = rng.next_below(n)
    centroids[0] = points[first]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for t in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.next_below(n)
        else:
            threshold = rng.next_uniform() * total
            idx = int(np.searchsorted(np.cumsum(d2), threshold, side="right"))
            idx = min(idx, n - 1)
        centroids[t] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[t]) ** 2).sum(axis=1))
    return centroids


def _pairwise_sq(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return (diff * diff).sum(axis=2)

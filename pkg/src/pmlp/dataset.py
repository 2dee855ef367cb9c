"""Feature-vector dataset loading, splitting, and standardization.

Datasets are immutable after construction: features N x D float64 with no
NaN/Inf, integer labels in [0, K). Splits are seeded and deterministic;
standardization statistics come from the train rows only.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import RngState

PNNL_MAGIC = b"PNNL"
PNNL_VERSION = 1
STDDEV_FLOOR = 1e-8


class DataError(Exception):
    """Malformed dataset file or invalid dataset contents."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", _freeze(self.features, np.float64))
        object.__setattr__(self, "labels", _freeze(self.labels, np.int64))
        f, y = self.features, self.labels
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise DataError(f"features must be a non-empty 2-D matrix, got {f.shape}")
        if not np.isfinite(f).all():
            raise DataError("features contain NaN or Inf")
        if y.shape != (f.shape[0],):
            raise DataError("labels length does not match feature rows")
        if self.num_classes < 2:
            raise DataError("need at least two classes")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise DataError("label outside [0, num_classes)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def _freeze(a: np.ndarray, dtype) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataSplit:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self) -> None:
        for name in ("train_idx", "val_idx", "test_idx"):
            object.__setattr__(self, name, _freeze(getattr(self, name), np.int64))


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    stddev: np.ndarray

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.stddev


def _infer_k(labels: np.ndarray, num_classes: int | None) -> int:
    observed = int(labels.max()) + 1
    if num_classes is None:
        k = max(observed, 2)
    else:
        if num_classes < observed:
            raise DataError(
                f"num_classes={num_classes} below max label {observed - 1}"
            )
        k = num_classes
    present = np.unique(labels)
    if len(present) < k:
        warnings.warn(
            f"only {len(present)} of {k} class labels appear in the data",
            stacklevel=3,
        )
    return k


def load_csv(
    path, label_column: str | int = "label", num_classes: int | None = None
) -> Dataset:
    """Load a comma-separated file with one header row.

    ``label_column`` selects the label field by header name or 0-based index;
    every other column is a feature. K defaults to max label + 1.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    data_rows = rows[1:]
    if not data_rows:
        raise DataError(f"{path}: no data rows")
    if isinstance(label_column, int):
        label_idx = label_column
        if not 0 <= label_idx < len(header):
            raise DataError(f"{path}: label column index {label_idx} out of range")
    else:
        try:
            label_idx = header.index(label_column)
        except ValueError:
            raise DataError(f"{path}: no column named {label_column!r}") from None

    width = len(header)
    features = np.empty((len(data_rows), width - 1), dtype=np.float64)
    labels = np.empty(len(data_rows), dtype=np.int64)
    for i, row in enumerate(data_rows):
        if len(row) != width:
            raise DataError(
                f"{path}: row {i + 2} has {len(row)} cells, expected {width}"
            )
        raw_label = row[label_idx]
        try:
            lab = float(raw_label)
        except ValueError:
            raise DataError(f"{path}: row {i + 2}: non-numeric label {raw_label!r}") from None
        if lab < 0 or lab != int(lab):
            raise DataError(f"{path}: row {i + 2}: label {raw_label!r} is not a non-negative integer")
        labels[i] = int(lab)
        j = 0
        for c, cell in enumerate(row):
            if c == label_idx:
                continue
            try:
                features[i, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i + 2}: non-numeric feature {cell!r}") from None
            j += 1
    return Dataset(features, labels, _infer_k(labels, num_classes))


def save_binary(dataset: Dataset, path) -> None:
    """Write the little-endian PNNL container (features as binary32)."""
    with open(path, "wb") as fh:
        fh.write(PNNL_MAGIC)
        fh.write(struct.pack("<HIII", PNNL_VERSION, dataset.n, dataset.d, dataset.num_classes))
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<u4").tobytes())


def load_binary(path) -> Dataset:
    with open(path, "rb") as fh:
        payload = fh.read()
    if payload[:4] != PNNL_MAGIC:
        raise DataError(f"{path}: bad magic {payload[:4]!r}")
    if len(payload) < 18:
        raise DataError(f"{path}: truncated header")
    version, n, d, k = struct.unpack_from("<HIII", payload, 4)
    if version != PNNL_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    body = payload[18:]
    expected = n * d * 4 + n * 4
    if len(body) != expected:
        raise DataError(
            f"{path}: payload holds {len(body)} bytes, header implies {expected}"
        )
    features = np.frombuffer(body[: n * d * 4], dtype="<f4").reshape(n, d)
    labels = np.frombuffer(body[n * d * 4 :], dtype="<u4").astype(np.int64)
    return Dataset(features.astype(np.float64), labels, k)


def _largest_remainder_sizes(n: int, fractions) -> list[int]:
    targets = [f * n for f in fractions]
    base = [int(t) for t in targets]
    rem = [t - b for t, b in zip(targets, base)]
    order = sorted(range(len(fractions)), key=lambda i: (-rem[i], i))
    for i in order[: n - sum(base)]:
        base[i] += 1
    return base


def split(
    dataset: Dataset,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DataSplit:
    """Deterministic train/val/test split.

    Seeded permutation then contiguous cut; sizes follow the fractions by
    largest remainder. Stratified per class when every class has at least
    10 members, plain otherwise.
    """
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be positive and sum to 1, got {fractions}")
    n = dataset.n
    if n < 10:
        raise DataError(f"need at least 10 samples to split, got {n}")
    sizes = _largest_remainder_sizes(n, fractions)
    if min(sizes) < 1:
        raise DataError(f"split sizes {sizes} leave an empty split")

    counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    stratify = bool((counts[counts > 0] >= 10).all())
    base = RngState(seed)
    if not stratify:
        perm = base.permutation(n)
        parts = (perm[: sizes[0]], perm[sizes[0] : sizes[0] + sizes[1]], perm[sizes[0] + sizes[1] :])
        return DataSplit(*(np.sort(p) for p in parts))

    class_pools = []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        if len(members):
            order = base.derive([c]).permutation(len(members))
            class_pools.append(members[order])
    taken = [np.zeros(len(p), dtype=bool) for p in class_pools]

    out: list[np.ndarray] = []
    for s, frac in enumerate(fractions[:2]):
        avail = [int((~t).sum()) for t in taken]
        quota = [frac * len(p) for p in class_pools]
        alloc = [min(int(q), a) for q, a in zip(quota, avail)]
        need = sizes[s] - sum(alloc)
        # distribute the remainder by largest fractional quota, then by
        # whatever classes still have spare members
        order = sorted(
            range(len(class_pools)),
            key=lambda c: (-(quota[c] - int(quota[c])), c),
        )
        while need > 0:
            progressed = False
            for c in order:
                if need == 0:
                    break
                if alloc[c] < avail[c]:
                    alloc[c] += 1
                    need -= 1
                    progressed = True
            if not progressed:
                raise DataError("split allocation failed")
        picked = []
        for c, pool in enumerate(class_pools):
            free = np.flatnonzero(~taken[c])[: alloc[c]]
            taken[c][free] = True
            picked.append(pool[free])
        out.append(np.sort(np.concatenate(picked)))
    leftovers = np.concatenate(
        [pool[~t] for pool, t in zip(class_pools, taken)]
    )
    out.append(np.sort(leftovers))
    return DataSplit(*out)


def standardize_fit_apply(
    dataset: Dataset, data_split: DataSplit
) -> tuple[Dataset, Standardizer]:
    """Fit per-column mean/stddev on train rows and transform all rows.

    Stddev is floored at 1e-8, so constant columns map to exactly zero.
    """
    train = dataset.features[data_split.train_idx]
    mean = train.mean(axis=0)
    stddev = np.maximum(train.std(axis=0), STDDEV_FLOOR)
    standardizer = Standardizer(_freeze(mean, np.float64), _freeze(stddev, np.float64))
    transformed = standardizer.apply(dataset.features)
    return Dataset(transformed, dataset.labels, dataset.num_classes), standardizer

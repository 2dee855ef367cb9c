"""Dense kernels, loss/gradient math, Adam, and the seeded RNG.

Everything downstream draws randomness from :class:`RngState` (splitmix64),
so runs are reproducible bit-for-bit across processes. Matrices are plain
2-D C-contiguous float64 numpy arrays; 32-bit floats appear only at file
boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """Stateless splitmix64 hash of a 64-bit integer."""
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass
class RngState:
    """splitmix64 generator; single owner, derive() for independent streams."""

    state: int

    def __post_init__(self) -> None:
        self.state &= _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def next_uniform(self) -> float:
        """Uniform in [0, 1): high 53 bits over 2**53."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, n: int) -> int:
        """Uniform-ish integer in [0, n) via modulo (bias negligible, portable)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def next_u64_array(self, n: int) -> np.ndarray:
        """Vectorized batch of next_u64 draws, bit-identical to n scalar calls."""
        if n == 0:
            return np.empty(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
        z = np.uint64(self.state) + steps
        self.state = (self.state + n * _GOLDEN) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
        return z ^ (z >> np.uint64(31))

    def uniform_array(self, shape: int | tuple[int, ...]) -> np.ndarray:
        n = int(np.prod(shape))
        vals = (self.next_u64_array(n) >> np.uint64(11)).astype(np.float64)
        return (vals * 2.0**-53).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of [0, n); consumes n-1 draws."""
        return self.partial_shuffle(n, n)

    def partial_shuffle(self, n: int, m: int) -> np.ndarray:
        """First stage of Fisher-Yates: positions [0, m) are final; consumes
        min(m, n-1) draws."""
        a = np.arange(n)
        k = min(m, n - 1)
        if k <= 0:
            return a
        draws = self.next_u64_array(k)
        sizes = np.arange(n - k + 1, n + 1, dtype=np.uint64)[::-1]
        js = draws % sizes
        for i in range(k):
            j = i + int(js[i])
            a[i], a[j] = a[j], a[i]
        return a

    def derive(self, tags: list[int] | tuple[int, ...]) -> "RngState":
        """Independent deterministic stream keyed by the tag sequence.

        Order-sensitive: derive([1, 2]) and derive([2, 1]) differ. Does not
        advance this state.
        """
        s = self.state
        for t in tags:
            s = mix64((s ^ mix64(t & _MASK64)) & _MASK64)
        return RngState(s)


def as_matrix(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with shape validation; deterministic for fixed inputs."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row softmax with max-subtraction for stability."""
    logits = as_matrix(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over rows.

    Returns (loss, grad_logits, per_sample_loss) where
    grad_logits = (softmax - onehot) / n and
    per_sample_loss[i] = -log softmax(logits[i])[labels[i]].
    """
    logits = as_matrix(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    per_sample = log_z - shifted[np.arange(n), labels]
    probs = np.exp(shifted - log_z[:, None])
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(per_sample.mean()), grad, per_sample


@dataclass
class AdamState:
    """First/second-moment accumulators, one pair per named parameter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with bias correction, in place.

    Weight decay is decoupled: p <- p - lr*wd*p before the moment update.
    Zero grads with zero decay leave params bit-identical.
    """
    if set(params) != set(grads):
        raise ValueError("params and grads must have the same keys")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape or state.m[key].shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {key!r}")
        if weight_decay:
            p -= lr * weight_decay * p
        m = state.m[key]
        v = state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state

"""Progressive topology: layers of fixed-width perceptron blocks.

A topology grows one block at a time; at most one block is ever trainable
and all earlier blocks stay frozen bit-for-bit. Hidden layers apply an
affine map followed by max(0, x) (tanh selectable), the output layer is
affine, predictions are the row-softmax argmax.

Training-time forward/backward passes live here too because the gradients
are hand-derived for this architecture: ``block_backward`` differentiates
only the newest block plus the output layer, ``full_backward`` covers every
parameter for the final joint pass.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import RngState, softmax, softmax_cross_entropy

PMLP_MAGIC = b"PMLP"
PMLP_VERSION = 1

_ACTIVATIONS = ("relu", "tanh")


@dataclass
class Block:
    weight: np.ndarray  # d_in x width
    bias: np.ndarray  # width
    frozen: bool = False

    @property
    def width(self) -> int:
        return self.weight.shape[1]


@dataclass
class Layer:
    blocks: list[Block] = field(default_factory=list)

    @property
    def width(self) -> int:
        return sum(b.width for b in self.blocks)

    @property
    def d_in(self) -> int:
        return self.blocks[0].weight.shape[0]

    def weight_matrix(self) -> np.ndarray:
        return np.hstack([b.weight for b in self.blocks])

    def bias_vector(self) -> np.ndarray:
        return np.concatenate([b.bias for b in self.blocks])


@dataclass
class Topology:
    input_dim: int
    num_classes: int
    layers: list[Layer] = field(default_factory=list)
    output_weight: np.ndarray | None = None
    output_bias: np.ndarray | None = None
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    # -- bookkeeping ------------------------------------------------------

    def trainable_block(self) -> Block | None:
        for layer in self.layers:
            for block in layer.blocks:
                if not block.frozen:
                    return block
        return None

    def freeze_all(self) -> "Topology":
        for layer in self.layers:
            for block in layer.blocks:
                block.frozen = True
        return self

    def param_count(self) -> int:
        total = 0
        for layer in self.layers:
            for b in layer.blocks:
                total += b.weight.size + b.bias.size
        if self.output_weight is not None:
            total += self.output_weight.size + self.output_bias.size
        return total

    def clone(self) -> "Topology":
        other = Topology(self.input_dim, self.num_classes, activation=self.activation)
        other.layers = [
            Layer([Block(b.weight.copy(), b.bias.copy(), b.frozen) for b in layer.blocks])
            for layer in self.layers
        ]
        if self.output_weight is not None:
            other.output_weight = self.output_weight.copy()
            other.output_bias = self.output_bias.copy()
        return other

    def _activate(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return np.maximum(z, 0.0)
        return np.tanh(z)

    def _activate_grad(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        if self.activation == "relu":
            return (z > 0.0).astype(np.float64)
        return 1.0 - a * a

    # -- growth -----------------------------------------------------------

    def add_block(self, block_size: int, rng: RngState) -> "Topology":
        """Append one trainable block to the last layer.

        New hidden weights draw uniform in [-sqrt(6/d_in), +sqrt(6/d_in)],
        bias starts at zero, and the matching output rows start at zero so
        the forward pass is unchanged until the block is trained.
        """
        if not self.layers:
            raise ValueError("no layer to grow; call start_new_layer first")
        if self.trainable_block() is not None:
            raise ValueError("an unfrozen block already exists")
        layer = self.layers[-1]
        d_in = layer.d_in
        layer.blocks.append(_init_block(d_in, block_size, rng))
        self.output_weight = np.vstack(
            [self.output_weight, np.zeros((block_size, self.num_classes))]
        )
        return self

    def start_new_layer(self, block_size: int, rng: RngState) -> "Topology":
        """Open a new layer with one trainable block and a fresh zero output
        layer; the previous output layer is discarded."""
        if self.trainable_block() is not None:
            raise ValueError("an unfrozen block already exists")
        d_in = self.layers[-1].width if self.layers else self.input_dim
        self.layers.append(Layer([_init_block(d_in, block_size, rng)]))
        self.output_weight = np.zeros((block_size, self.num_classes))
        self.output_bias = np.zeros(self.num_classes)
        return self


def _init_block(d_in: int, width: int, rng: RngState) -> Block:
    scale = np.sqrt(6.0 / d_in)
    draws = rng.uniform_array((d_in, width))
    return Block(weight=(2.0 * draws - 1.0) * scale, bias=np.zeros(width))


def forward(
    topology: Topology, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inference pass: returns (logits, last_hidden, probabilities)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != topology.input_dim:
        raise ValueError(
            f"input shape {x.shape} does not match input_dim={topology.input_dim}"
        )
    if not topology.layers:
        raise ValueError("topology has no layers")
    h = x
    for layer in topology.layers:
        h = topology._activate(h @ layer.weight_matrix() + layer.bias_vector())
    logits = h @ topology.output_weight + topology.output_bias
    return logits, h, softmax(logits)


def predict(topology: Topology, x: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    logits, _, _ = forward(topology, x)
    return logits.argmax(axis=1)


# -- training-time passes --------------------------------------------------


def block_training_loss(
    topology: Topology,
    x: np.ndarray,
    labels: np.ndarray,
    dropout_mask: np.ndarray | None = None,
    dropout_rate: float = 0.0,
) -> float:
    """Loss of the training forward pass for the newest-block phase.

    The dropout mask (0/1, shaped like the trainable block's activations)
    applies inverted scaling to those columns only.
    """
    loss, _ = _block_pass(topology, x, labels, dropout_mask, dropout_rate, want_grads=False)
    return loss


def block_backward(
    topology: Topology,
    x: np.ndarray,
    labels: np.ndarray,
    dropout_mask: np.ndarray | None = None,
    dropout_rate: float = 0.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradients for the trainable block and the output layer."""
    return _block_pass(topology, x, labels, dropout_mask, dropout_rate, want_grads=True)


def _block_pass(topology, x, labels, dropout_mask, dropout_rate, want_grads):
    block = topology.trainable_block()
    if block is None:
        raise ValueError("no trainable block")
    last = topology.layers[-1]
    if block is not last.blocks[-1]:
        raise ValueError("trainable block must be the newest block of the last layer")
    h = np.ascontiguousarray(x, dtype=np.float64)
    for layer in topology.layers[:-1]:
        h = topology._activate(h @ layer.weight_matrix() + layer.bias_vector())

    z = h @ last.weight_matrix() + last.bias_vector()
    a = topology._activate(z)
    new_cols = slice(last.width - block.width, last.width)
    if dropout_mask is not None and dropout_rate > 0.0:
        a = a.copy()
        a[:, new_cols] *= dropout_mask / (1.0 - dropout_rate)
    logits = a @ topology.output_weight + topology.output_bias
    loss, grad_logits, _ = softmax_cross_entropy(logits, labels)
    if not want_grads:
        return loss, {}

    grad_out_w = a.T @ grad_logits
    grad_out_b = grad_logits.sum(axis=0)
    da = grad_logits @ topology.output_weight.T
    da_new = da[:, new_cols]
    if dropout_mask is not None and dropout_rate > 0.0:
        da_new = da_new * (dropout_mask / (1.0 - dropout_rate))
    dz_new = da_new * topology._activate_grad(z[:, new_cols], a[:, new_cols])
    grads = {
        "block_weight": h.T @ dz_new,
        "block_bias": dz_new.sum(axis=0),
        "output_weight": grad_out_w,
        "output_bias": grad_out_b,
    }
    return loss, grads


def full_training_loss(
    topology: Topology,
    x: np.ndarray,
    labels: np.ndarray,
    dropout_masks: list[np.ndarray] | None = None,
    dropout_rate: float = 0.0,
) -> float:
    loss, _ = _full_pass(topology, x, labels, dropout_masks, dropout_rate, want_grads=False)
    return loss


def full_backward(
    topology: Topology,
    x: np.ndarray,
    labels: np.ndarray,
    dropout_masks: list[np.ndarray] | None = None,
    dropout_rate: float = 0.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradients for every parameter (joint fine-tuning pass).

    ``dropout_masks`` holds one 0/1 mask per hidden layer, applied with
    inverted scaling to the whole layer's activations.
    """
    return _full_pass(topology, x, labels, dropout_masks, dropout_rate, want_grads=True)


def _full_pass(topology, x, labels, dropout_masks, dropout_rate, want_grads):
    if not topology.layers:
        raise ValueError("topology has no layers")
    use_dropout = dropout_masks is not None and dropout_rate > 0.0
    keep = 1.0 - dropout_rate
    h = np.ascontiguousarray(x, dtype=np.float64)
    inputs, pre_acts, acts = [], [], []
    for li, layer in enumerate(topology.layers):
        inputs.append(h)
        z = h @ layer.weight_matrix() + layer.bias_vector()
        a = topology._activate(z)
        if use_dropout:
            a = a * (dropout_masks[li] / keep)
        pre_acts.append(z)
        acts.append(a)
        h = a
    logits = h @ topology.output_weight + topology.output_bias
    loss, grad_logits, _ = softmax_cross_entropy(logits, labels)
    if not want_grads:
        return loss, {}

    grads: dict[str, np.ndarray] = {
        "output_weight": h.T @ grad_logits,
        "output_bias": grad_logits.sum(axis=0),
    }
    da = grad_logits @ topology.output_weight.T
    for li in range(len(topology.layers) - 1, -1, -1):
        layer = topology.layers[li]
        if use_dropout:
            da = da * (dropout_masks[li] / keep)
        dz = da * topology._activate_grad(pre_acts[li], acts[li])
        col = 0
        for bi, block in enumerate(layer.blocks):
            sl = slice(col, col + block.width)
            grads[f"layer{li}_block{bi}_weight"] = inputs[li].T @ dz[:, sl]
            grads[f"layer{li}_block{bi}_bias"] = dz[:, sl].sum(axis=0)
            col += block.width
        if li:
            da = dz @ layer.weight_matrix().T
    return loss, grads


# -- persistence -----------------------------------------------------------


def save_model(topology: Topology, path) -> None:
    """Write the little-endian PMLP container (weights as binary64)."""
    with open(path, "wb") as fh:
        fh.write(PMLP_MAGIC)
        fh.write(
            struct.pack(
                "<HIII",
                PMLP_VERSION,
                topology.input_dim,
                topology.num_classes,
                len(topology.layers),
            )
        )
        for layer in topology.layers:
            widths = {b.width for b in layer.blocks}
            if len(widths) != 1:
                raise ValueError("blocks within a layer must share one width")
            fh.write(struct.pack("<II", len(layer.blocks), widths.pop()))
        for layer in topology.layers:
            for block in layer.blocks:
                fh.write(np.ascontiguousarray(block.weight, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(block.bias, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(topology.output_weight, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(topology.output_bias, dtype="<f8").tobytes())


def load_model(path) -> Topology:
    """Read a PMLP container; all blocks load frozen."""
    with open(path, "rb") as fh:
        payload = fh.read()
    if payload[:4] != PMLP_MAGIC:
        raise ValueError(f"{path}: bad magic {payload[:4]!r}")
    version, d, k, n_layers = struct.unpack_from("<HIII", payload, 4)
    if version != PMLP_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 18
    shape: list[tuple[int, int]] = []
    for _ in range(n_layers):
        n_blocks, width = struct.unpack_from("<II", payload, off)
        off += 8
        shape.append((n_blocks, width))

    def take(count: int) -> np.ndarray:
        nonlocal off
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off)
        off += count * 8
        return arr.astype(np.float64)

    topo = Topology(d, k)
    d_in = d
    for n_blocks, width in shape:
        layer = Layer()
        for _ in range(n_blocks):
            w = take(d_in * width).reshape(d_in, width)
            b = take(width)
            layer.blocks.append(Block(w, b, frozen=True))
        topo.layers.append(layer)
        d_in = layer.width
    topo.output_weight = take(d_in * k).reshape(d_in, k)
    topo.output_bias = take(k)
    if off != len(payload):
        raise ValueError(f"{path}: trailing bytes after model payload")
    return topo


def frozen_bytes(topology: Topology) -> bytes:
    """Concatenated bytes of every frozen block, for immutability checks."""
    parts = []
    for layer in topology.layers:
        for block in layer.blocks:
            if block.frozen:
                parts.append(block.weight.tobytes())
                parts.append(block.bias.tobytes())
    return b"".join(parts)

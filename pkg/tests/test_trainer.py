from __future__ import annotations

import numpy as np
import pytest

from pmlp.hyperopt import HyperParams
from pmlp.network import Topology, frozen_bytes
from pmlp.numerics import RngState
from pmlp.sampling import Subset
from pmlp.trainer import (
    SplitArrays,
    TrainingError,
    evaluate,
    fine_tune,
    optimize_block,
)


class AccessLog:
    """Array wrapper recording every row index requested via indexing."""

    def __init__(self, data):
        self.data = np.asarray(data)
        self.rows: set[int] = set()

    def __getitem__(self, key):
        self.rows.update(int(i) for i in np.atleast_1d(np.asarray(key)).ravel())
        return self.data[key]


def separable_blobs(n=80, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    x = rng.standard_normal((n, 2)) + 8.0 * np.stack([labels, np.zeros(n)], axis=1)
    return x, labels.astype(np.int64)


def fresh_topology(d=2, k=2, block=4, seed=3):
    topo = Topology(d, k)
    topo.start_new_layer(block, RngState(seed))
    return topo


def grown_topology(d=2, k=2, block=4, seed=3):
    topo = fresh_topology(d, k, block, seed)
    topo.freeze_all()
    topo.add_block(block, RngState(seed + 1))
    return topo


class TestOptimizeBlock:
    def test_lr_zero_is_fixed_point(self):
        x, y = separable_blobs()
        topo = fresh_topology()
        before = {
            "w": topo.layers[0].blocks[0].weight.copy(),
            "b": topo.layers[0].blocks[0].bias.copy(),
            "ow": topo.output_weight.copy(),
            "ob": topo.output_bias.copy(),
        }
        hp = HyperParams(learning_rate=0.0, weight_decay=0.0, epochs=3)
        optimize_block(topo, Subset(np.arange(len(y))), hp, x, y, RngState(5))
        assert topo.layers[0].blocks[0].weight.tobytes() == before["w"].tobytes()
        assert topo.layers[0].blocks[0].bias.tobytes() == before["b"].tobytes()
        assert topo.output_weight.tobytes() == before["ow"].tobytes()
        assert topo.output_bias.tobytes() == before["ob"].tobytes()

    def test_epochs_zero_disallowed(self):
        with pytest.raises(ValueError, match="epochs"):
            HyperParams(learning_rate=0.1, epochs=0)

    def test_fits_separable_blobs(self):
        x, y = separable_blobs()
        topo = fresh_topology()
        hp = HyperParams(learning_rate=0.05, epochs=50)
        topo, stats = optimize_block(topo, Subset(np.arange(len(y))), hp, x, y, RngState(7))
        accuracy, _ = evaluate(topo, x, y)
        assert accuracy == 1.0
        assert stats.final_subset_loss < stats.initial_subset_loss
        assert stats.epochs_run == 50
        assert stats.wall_time > 0

    def test_frozen_blocks_untouched(self):
        x, y = separable_blobs()
        topo = grown_topology()
        before = frozen_bytes(topo)
        hp = HyperParams(learning_rate=0.1, weight_decay=1e-3, dropout_rate=0.2, epochs=4)
        optimize_block(topo, Subset(np.arange(0, 40)), hp, x, y, RngState(9))
        assert frozen_bytes(topo) == before

    def test_only_subset_rows_accessed(self):
        x, y = separable_blobs()
        subset = Subset(np.array([3, 5, 8, 13, 21, 34]))
        logged_x, logged_y = AccessLog(x), AccessLog(y)
        topo = fresh_topology()
        hp = HyperParams(learning_rate=0.05, epochs=5)
        optimize_block(topo, subset, hp, logged_x, logged_y, RngState(11))
        want = set(subset.indices.tolist())
        assert logged_x.rows == want
        assert logged_y.rows == want

    def test_deterministic_given_stream(self):
        x, y = separable_blobs()
        hp = HyperParams(learning_rate=0.05, dropout_rate=0.3, epochs=6)
        outs = []
        for _ in range(2):
            topo = fresh_topology()
            optimize_block(topo, Subset(np.arange(0, 50)), hp, x, y, RngState(21))
            outs.append(
                topo.layers[0].blocks[0].weight.tobytes() + topo.output_weight.tobytes()
            )
        assert outs[0] == outs[1]

    def test_requires_trainable_block(self):
        x, y = separable_blobs()
        topo = fresh_topology()
        topo.freeze_all()
        with pytest.raises(TrainingError, match="no trainable block"):
            optimize_block(topo, Subset(np.arange(10)), HyperParams(0.1), x, y, RngState(0))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverging_lr_raises(self):
        x, y = separable_blobs()
        x = x * 1e150
        topo = fresh_topology()
        hp = HyperParams(learning_rate=1e200, epochs=2)
        with pytest.raises(TrainingError, match="non-finite"):
            optimize_block(topo, Subset(np.arange(len(y))), hp, x, y, RngState(1))


class TestEvaluate:
    def test_zero_topology_balanced_binary(self):
        topo = fresh_topology(d=3, k=2, block=2)
        topo.layers[0].blocks[0].weight[:] = 0.0
        x = np.random.default_rng(0).standard_normal((10, 3))
        y = np.array([0, 1] * 5)
        accuracy, loss = evaluate(topo, x, y)
        assert accuracy == 0.5  # all rows predict class 0; labels balanced
        assert loss == pytest.approx(np.log(2.0), rel=1e-12)

    def test_perfect_predictions(self):
        x, y = separable_blobs()
        topo = fresh_topology()
        optimize_block(
            topo, Subset(np.arange(len(y))), HyperParams(0.05, epochs=50), x, y, RngState(7)
        )
        accuracy, _ = evaluate(topo, x, y)
        assert accuracy == 1.0

    def test_matches_per_sample_loop(self):
        rng = np.random.default_rng(5)
        topo = fresh_topology(d=4, k=3, block=3, seed=8)
        topo.output_weight[:] = rng.standard_normal(topo.output_weight.shape)
        x = rng.standard_normal((30, 4))
        y = rng.integers(0, 3, size=30)
        accuracy, _ = evaluate(topo, x, y)
        from pmlp.network import predict

        hits = 0
        for i in range(30):
            hits += int(predict(topo, x[i : i + 1])[0] == y[i])
        assert accuracy == hits / 30

    def test_evaluate_twice_bit_identical(self):
        x, y = separable_blobs()
        topo = grown_topology()
        a = evaluate(topo, x, y)
        b = evaluate(topo, x, y)
        assert a == b


class TestFineTune:
    def _data(self, seed=1):
        x, y = separable_blobs(120, seed=seed)
        return SplitArrays(x[:80], y[:80], x[80:100], y[80:100], x[100:], y[100:])

    def test_lr_zero_returns_input(self):
        data = self._data()
        topo = grown_topology()
        before = (
            topo.layers[0].blocks[0].weight.copy(),
            topo.output_weight.copy(),
        )
        fine_tune(topo, data, HyperParams(0.0, epochs=1), 3, RngState(2))
        assert topo.layers[0].blocks[0].weight.tobytes() == before[0].tobytes()
        assert topo.output_weight.tobytes() == before[1].tobytes()

    def test_epochs_zero_returns_input(self):
        data = self._data()
        topo = grown_topology()
        before = topo.output_weight.copy()
        fine_tune(topo, data, HyperParams(0.5, epochs=1), 0, RngState(2))
        assert topo.output_weight.tobytes() == before.tobytes()

    def test_checkpoint_never_below_start(self):
        data = self._data()
        for seed in (1, 2, 3):
            topo = grown_topology(seed=seed)
            start_acc, _ = evaluate(topo, data.val_x, data.val_y)
            fine_tune(topo, data, HyperParams(0.05, epochs=1), 8, RngState(seed))
            end_acc, _ = evaluate(topo, data.val_x, data.val_y)
            assert end_acc >= start_acc

    def test_all_blocks_frozen_after(self):
        data = self._data()
        topo = grown_topology()
        fine_tune(topo, data, HyperParams(0.05, epochs=1), 2, RngState(4))
        assert all(b.frozen for layer in topo.layers for b in layer.blocks)

    def test_improves_underfit_net(self):
        data = self._data()
        topo = grown_topology()
        before, _ = evaluate(topo, data.test_x, data.test_y)
        fine_tune(topo, data, HyperParams(0.05, epochs=1), 10, RngState(5))
        after, _ = evaluate(topo, data.test_x, data.test_y)
        assert after >= before

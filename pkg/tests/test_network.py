from __future__ import annotations

import numpy as np
import pytest

from oracles import RefRng

from pmlp.network import (
    Topology,
    block_backward,
    block_training_loss,
    forward,
    frozen_bytes,
    full_backward,
    full_training_loss,
    load_model,
    predict,
    save_model,
)
from pmlp.numerics import RngState


def build_net(d=2, k=3, block=2, seed=1) -> Topology:
    topo = Topology(d, k)
    topo.start_new_layer(block, RngState(seed))
    return topo


class TestForward:
    def test_zero_net_uniform_probabilities(self):
        topo = build_net(d=4, k=3, block=2, seed=0)
        topo.layers[0].blocks[0].weight[:] = 0.0
        logits, _, probs = forward(topo, np.zeros((5, 4)))
        assert np.array_equal(logits, np.zeros((5, 3)))
        np.testing.assert_allclose(probs, 1.0 / 3.0, atol=1e-15)

    def test_hand_computed_logits(self):
        topo = build_net(d=2, k=2, block=2)
        topo.layers[0].blocks[0].weight[:] = np.array([[1.0, -1.0], [2.0, 0.5]])
        topo.layers[0].blocks[0].bias[:] = np.array([0.1, -0.2])
        topo.output_weight[:] = np.array([[1.0, 0.0], [0.0, 2.0]])
        topo.output_bias[:] = np.array([0.5, -0.5])
        x = np.array([[1.0, 1.0]])
        # hidden pre-activation: [1+2+0.1, -1+0.5-0.2] = [3.1, -0.7] -> relu [3.1, 0]
        # logits: [3.1*1 + 0.5, 0*2 - 0.5] = [3.6, -0.5]
        logits, hidden, _ = forward(topo, x)
        np.testing.assert_allclose(hidden, [[3.1, 0.0]], atol=1e-15)
        np.testing.assert_allclose(logits, [[3.6, -0.5]], atol=1e-15)

    def test_batch_equals_stacked_singles(self):
        rng = np.random.default_rng(5)
        topo = build_net(d=6, k=4, block=3, seed=9)
        x = rng.standard_normal((4, 6))
        batch_logits, _, _ = forward(topo, x)
        singles = np.vstack([forward(topo, x[i : i + 1])[0] for i in range(4)])
        np.testing.assert_allclose(batch_logits, singles, atol=1e-12)

    def test_dimension_mismatch(self):
        topo = build_net(d=3)
        with pytest.raises(ValueError, match="input shape"):
            forward(topo, np.ones((2, 4)))

    def test_tanh_activation(self):
        topo = Topology(2, 2, activation="tanh")
        topo.start_new_layer(2, RngState(3))
        topo.layers[0].blocks[0].weight[:] = np.eye(2)
        topo.layers[0].blocks[0].bias[:] = 0.0
        _, hidden, _ = forward(topo, np.array([[0.5, -0.5]]))
        np.testing.assert_allclose(hidden, np.tanh([[0.5, -0.5]]), atol=1e-15)


class TestGrowth:
    def test_add_block_bookkeeping(self):
        topo = build_net(d=3, k=2, block=8, seed=4)
        topo.freeze_all()
        old_rows = topo.output_weight.copy()
        topo.add_block(4, RngState(5))
        assert topo.layers[0].width == 12
        assert topo.output_weight.shape == (12, 2)
        assert topo.output_weight[:8].tobytes() == old_rows.tobytes()
        assert np.array_equal(topo.output_weight[8:], np.zeros((4, 2)))

    def test_add_block_preserves_logits_bit_exactly(self):
        rng = np.random.default_rng(2)
        topo = build_net(d=5, k=3, block=4, seed=8)
        topo.layers[0].blocks[0].weight[:] = rng.standard_normal((5, 4))
        topo.output_weight[:] = rng.standard_normal((4, 3))
        topo.output_bias[:] = rng.standard_normal(3)
        x = rng.standard_normal((7, 5))
        before = forward(topo, x)[0]
        topo.freeze_all()
        topo.add_block(4, RngState(123))
        after = forward(topo, x)[0]
        assert before.tobytes() == after.tobytes()

    def test_add_block_requires_frozen(self):
        topo = build_net()
        with pytest.raises(ValueError, match="unfrozen block"):
            topo.add_block(2, RngState(0))

    def test_init_draws_match_reference_rng(self):
        topo = build_net(d=4, k=2, block=3, seed=0)
        topo.freeze_all()
        topo.add_block(3, RngState(77))
        ref = RefRng(77)
        scale = np.sqrt(6.0 / 4.0)
        expect = np.array([(2.0 * ref.next_uniform() - 1.0) * scale for _ in range(12)]).reshape(4, 3)
        assert np.array_equal(topo.layers[0].blocks[1].weight, expect)
        assert np.array_equal(topo.layers[0].blocks[1].bias, np.zeros(3))

    def test_start_new_layer(self):
        topo = build_net(d=3, k=5, block=4, seed=1)
        topo.freeze_all()
        for _ in range(2):
            topo.add_block(4, RngState(2))
            topo.freeze_all()
        old_params = topo.param_count()
        assert topo.layers[0].width == 12
        topo.start_new_layer(4, RngState(3))
        assert len(topo.layers) == 2
        assert topo.layers[1].width == 4
        assert topo.output_weight.shape == (4, 5)
        assert np.array_equal(topo.output_weight, np.zeros((4, 5)))
        _, _, probs = forward(topo, np.random.default_rng(0).standard_normal((3, 3)))
        np.testing.assert_allclose(probs, 0.2, atol=1e-15)
        old_hidden = old_params - (12 * 5 + 5)
        assert topo.param_count() == old_hidden + (12 * 4 + 4) + (4 * 5 + 5)

    def test_start_new_layer_requires_frozen(self):
        topo = build_net()
        with pytest.raises(ValueError, match="unfrozen block"):
            topo.start_new_layer(2, RngState(0))

    def test_width_tracks_output_rows(self):
        topo = build_net(d=3, k=2, block=2, seed=0)
        rng = RngState(5)
        for _ in range(3):
            topo.freeze_all()
            topo.add_block(2, rng)
            assert topo.output_weight.shape[0] == topo.layers[-1].width
        topo.freeze_all()
        topo.start_new_layer(2, rng)
        assert topo.output_weight.shape[0] == topo.layers[-1].width


class TestPredictAndCounts:
    def test_param_count_example(self):
        topo = build_net(d=2, k=2, block=3)
        assert topo.param_count() == 2 * 3 + 3 + 3 * 2 + 2

    def test_predict_tie_lowest_index(self):
        topo = build_net(d=2, k=3, block=1, seed=0)
        topo.layers[0].blocks[0].weight[:] = 0.0
        topo.output_bias[:] = np.array([0.2, 0.9, 0.9])
        assert predict(topo, np.zeros((1, 2))).tolist() == [1]
        topo.output_bias[:] = np.array([0.9, 0.2, 0.9])
        assert predict(topo, np.zeros((1, 2))).tolist() == [0]


class TestPersistence:
    def _trained_like_net(self):
        rng = np.random.default_rng(0)
        topo = Topology(4, 3)
        topo.start_new_layer(3, RngState(1))
        topo.freeze_all()
        topo.add_block(3, RngState(2))
        topo.freeze_all()
        topo.start_new_layer(2, RngState(3))
        topo.freeze_all()
        topo.output_weight[:] = rng.standard_normal((2, 3))
        topo.output_bias[:] = rng.standard_normal(3)
        return topo

    def test_round_trip_evaluation_bit_identical(self, tmp_path):
        topo = self._trained_like_net()
        x = np.random.default_rng(4).standard_normal((6, 4))
        before = forward(topo, x)[0]
        path = tmp_path / "m.pmlp"
        save_model(topo, path)
        loaded = load_model(path)
        after = forward(loaded, x)[0]
        assert before.tobytes() == after.tobytes()
        assert all(b.frozen for layer in loaded.layers for b in layer.blocks)

    def test_file_round_trip_bytes(self, tmp_path):
        topo = self._trained_like_net()
        p1, p2 = tmp_path / "a.pmlp", tmp_path / "b.pmlp"
        save_model(topo, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pmlp"
        path.write_bytes(b"NOPE" + b"\0" * 40)
        with pytest.raises(ValueError, match="bad magic"):
            load_model(path)

    def test_frozen_bytes_reflects_only_frozen_blocks(self):
        topo = build_net(d=2, k=2, block=2, seed=0)
        assert frozen_bytes(topo) == b""
        topo.freeze_all()
        assert len(frozen_bytes(topo)) == (2 * 2 + 2) * 8


class TestGradients:
    def _rand_net(self, seed, layers=1, d=5, k=3, block=3):
        # random biases keep pre-activations away from the relu kink, where
        # finite differences are invalid
        rng = np.random.default_rng(seed)
        topo = Topology(d, k)
        srng = RngState(seed)
        topo.start_new_layer(block, srng)
        for _ in range(layers - 1):
            topo.freeze_all()
            topo.start_new_layer(block, srng)
        for layer in topo.layers:
            for b in layer.blocks:
                b.bias[:] = rng.standard_normal(b.bias.shape) * 0.2
        topo.output_weight[:] = rng.standard_normal(topo.output_weight.shape) * 0.7
        topo.output_bias[:] = rng.standard_normal(k) * 0.3
        return topo

    def _check_block_grads(self, topo, x, y, mask, rate):
        _, grads = block_backward(topo, x, y, mask, rate)
        block = topo.trainable_block()
        arrays = {
            "block_weight": block.weight,
            "block_bias": block.bias,
            "output_weight": topo.output_weight,
            "output_bias": topo.output_bias,
        }
        h = 1e-6
        worst = 0.0
        for key, arr in arrays.items():
            flat = arr.ravel()
            for pos in range(flat.size):
                orig = flat[pos]
                flat[pos] = orig + h
                up = block_training_loss(topo, x, y, mask, rate)
                flat[pos] = orig - h
                down = block_training_loss(topo, x, y, mask, rate)
                flat[pos] = orig
                fd = (up - down) / (2 * h)
                analytic = grads[key].ravel()[pos]
                worst = max(worst, abs(analytic - fd) / max(abs(analytic) + abs(fd), 1e-6))
        assert worst < 1e-4

    def test_block_gradients_no_dropout(self):
        topo = self._rand_net(11)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((6, 5))
        y = rng.integers(0, 3, size=6)
        self._check_block_grads(topo, x, y, None, 0.0)

    def test_block_gradients_fixed_dropout_mask(self):
        topo = self._rand_net(13)
        rng = np.random.default_rng(13)
        x = rng.standard_normal((6, 5))
        y = rng.integers(0, 3, size=6)
        mask = (rng.random((6, 3)) > 0.4).astype(float)
        self._check_block_grads(topo, x, y, mask, 0.4)

    def test_full_gradients_two_layers_fixed_masks(self):
        topo = self._rand_net(17, layers=2)
        rng = np.random.default_rng(17)
        x = rng.standard_normal((5, 5))
        y = rng.integers(0, 3, size=5)
        masks = [(rng.random((5, layer.width)) > 0.3).astype(float) for layer in topo.layers]
        _, grads = full_backward(topo, x, y, masks, 0.3)
        arrays = {"output_weight": topo.output_weight, "output_bias": topo.output_bias}
        for li, layer in enumerate(topo.layers):
            for bi, b in enumerate(layer.blocks):
                arrays[f"layer{li}_block{bi}_weight"] = b.weight
                arrays[f"layer{li}_block{bi}_bias"] = b.bias
        h = 1e-6
        worst = 0.0
        for key, arr in arrays.items():
            flat = arr.ravel()
            for pos in range(flat.size):
                orig = flat[pos]
                flat[pos] = orig + h
                up = full_training_loss(topo, x, y, masks, 0.3)
                flat[pos] = orig - h
                down = full_training_loss(topo, x, y, masks, 0.3)
                flat[pos] = orig
                fd = (up - down) / (2 * h)
                analytic = grads[key].ravel()[pos]
                worst = max(worst, abs(analytic - fd) / max(abs(analytic) + abs(fd), 1e-6))
        assert worst < 1e-4

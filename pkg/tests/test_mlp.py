"""Tests for the flat-vector MLP: layout, forward/backward, losses, checkpoints."""
from __future__ import annotations

import json

import numpy as np
import pytest

from minima_geom.mlp import (
    LOSS_KINDS,
    TOY_WIDTHS,
    MLPParams,
    cross_entropy_loss,
    forward,
    forward_with_cache,
    kaiming_init,
    load_checkpoint,
    loss_and_gradient,
    mse_loss,
    parameter_count,
    save_checkpoint,
)
from minima_geom.validation import NumericError


def random_params(widths, seed=0):
    rng = np.random.default_rng(seed)
    return MLPParams(widths, rng.standard_normal(parameter_count(widths)))


class TestParameterLayout:
    """Flat-vector bookkeeping: counts, views, ordering."""

    def test_toy_parameter_count(self):
        """2-64-64-1 totals (64*2+64) + (64*64+64) + (1*64+1) = 4417."""
        assert parameter_count(TOY_WIDTHS) == 4417

    def test_count_small_nets(self):
        assert parameter_count((3, 2)) == 8
        assert parameter_count((1, 1, 1)) == 4

    def test_layers_are_views(self):
        """Mutating a layer view mutates the flat vector."""
        p = MLPParams((2, 3, 1), np.zeros(parameter_count((2, 3, 1))))
        W0, b0 = p.layers[0]
        W0[1, 0] = 5.0
        b0[2] = -1.0
        assert p.flat[2] == 5.0  # row-major: W0 is (3, 2), entry (1, 0) is index 2
        assert p.flat[8] == -1.0  # biases follow the 6 weights

    def test_layer_shapes(self):
        p = random_params(TOY_WIDTHS)
        shapes = [(W.shape, b.shape) for W, b in p.layers]
        assert shapes == [((64, 2), (64,)), ((64, 64), (64,)), ((1, 64), (1,))]

    def test_flat_concatenation_order(self):
        """Flat layout is W0, b0, W1, b1, ... in row-major weight order."""
        p = random_params((2, 2, 1), seed=3)
        W0, b0 = p.layers[0]
        W1, b1 = p.layers[1]
        expected = np.concatenate([W0.ravel(), b0, W1.ravel(), b1])
        np.testing.assert_array_equal(p.flat, expected)

    def test_rejects_wrong_flat_length(self):
        with pytest.raises(ValueError, match="flat vector"):
            MLPParams((2, 3, 1), np.zeros(5))

    def test_rejects_bad_widths(self):
        with pytest.raises(ValueError, match="widths"):
            MLPParams((2,), np.zeros(2))
        with pytest.raises(ValueError, match="widths"):
            MLPParams((2, 0, 1), np.zeros(1))

    def test_copy_is_independent(self):
        p = random_params((2, 3, 1))
        q = p.copy()
        q.flat[0] = 123.0
        assert p.flat[0] != 123.0


class TestKaimingInit:
    """Fan-in uniform weights, zero biases, reproducible draws."""

    def test_biases_zero(self):
        p = kaiming_init(TOY_WIDTHS, np.random.default_rng(0))
        for _, b in p.layers:
            assert np.all(b == 0.0)

    def test_weight_bounds(self):
        p = kaiming_init(TOY_WIDTHS, np.random.default_rng(0))
        for (W, _), fan_in in zip(p.layers, TOY_WIDTHS[:-1]):
            bound = np.sqrt(6.0 / fan_in)
            assert np.all(np.abs(W) <= bound)
            # wide layers should come close to the bound
            if W.size >= 4096:
                assert np.max(np.abs(W)) > 0.95 * bound

    def test_same_seed_same_init(self):
        a = kaiming_init(TOY_WIDTHS, np.random.default_rng(42))
        b = kaiming_init(TOY_WIDTHS, np.random.default_rng(42))
        np.testing.assert_array_equal(a.flat, b.flat)

    def test_different_seed_differs(self):
        a = kaiming_init(TOY_WIDTHS, np.random.default_rng(1))
        b = kaiming_init(TOY_WIDTHS, np.random.default_rng(2))
        assert not np.array_equal(a.flat, b.flat)


class TestForward:
    """The affine/ReLU composition on hand-checkable nets."""

    def test_identity_tiny_net(self):
        """1-1-1 net with unit weights and zero biases is ReLU(x)."""
        p = MLPParams((1, 1, 1), np.array([1.0, 0.0, 1.0, 0.0]))
        X = np.array([[-2.0], [0.5], [3.0]])
        out = forward(p.flat, p.widths, X)
        np.testing.assert_array_equal(out, [[0.0], [0.5], [3.0]])

    def test_affine_output_layer_not_rectified(self):
        """The final layer is affine; negative outputs pass through."""
        p = MLPParams((1, 1, 1), np.array([1.0, 0.0, -1.0, 0.0]))
        out = forward(p.flat, p.widths, np.array([[2.0]]))
        assert out[0, 0] == -2.0

    def test_hand_computed_two_layer(self):
        # W0 = [[1, -1]], b0 = [0.5]; W1 = [[2]], b1 = [-1]
        flat = np.array([1.0, -1.0, 0.5, 2.0, -1.0])
        p = MLPParams((2, 1, 1), flat)
        X = np.array([[1.0, 0.0], [0.0, 2.0]])
        # hidden: relu(1*1 - 1*0 + 0.5) = 1.5 ; relu(0 - 2 + 0.5) = 0
        # out: 2*1.5 - 1 = 2 ; 2*0 - 1 = -1
        out = forward(p.flat, p.widths, X)
        np.testing.assert_array_equal(out, [[2.0], [-1.0]])

    def test_batched_leading_run_axis(self):
        """A (R, P) parameter stack produces (R, N, out) outputs matching per-run calls."""
        rng = np.random.default_rng(5)
        stack = rng.standard_normal((3, parameter_count((2, 4, 1))))
        X = rng.standard_normal((3, 7, 2))
        batched = forward(stack, (2, 4, 1), X)
        assert batched.shape == (3, 7, 1)
        for r in range(3):
            single = forward(stack[r], (2, 4, 1), X[r])
            np.testing.assert_array_equal(batched[r], single)

    def test_cache_layout(self):
        """Activations list the input, then each layer's post-activation output."""
        p = random_params((2, 3, 1))
        X = np.random.default_rng(0).standard_normal((5, 2))
        out, acts = forward_with_cache(p.flat, p.widths, X)
        assert len(acts) == 3
        assert acts[0] is X
        assert acts[1].shape == (5, 3)
        assert np.all(acts[1] >= 0.0)
        np.testing.assert_array_equal(acts[2], out)

    def test_check_finite_raises(self):
        p = MLPParams((1, 1, 1), np.array([np.inf, 0.0, 1.0, 0.0]))
        with pytest.raises(NumericError, match="non-finite"):
            forward(p.flat, p.widths, np.array([[1.0]]), check_finite=True)

    def test_check_finite_off_propagates_nan(self):
        p = MLPParams((1, 1, 1), np.array([np.nan, 0.0, 1.0, 0.0]))
        out = forward(p.flat, p.widths, np.array([[1.0]]))
        assert np.isnan(out).all()


class TestLosses:
    """MSE and cross-entropy values and gradients on hand cases."""

    def test_mse_hand_case(self):
        pred = np.array([[1.0], [3.0]])
        targets = np.array([0.0, 1.0])
        loss, dpred = mse_loss(pred, targets)
        assert loss == (1.0 + 4.0) / 2
        np.testing.assert_array_equal(dpred, [[1.0], [2.0]])

    def test_mse_shared_targets_broadcast_over_runs(self):
        """A single (N,) target vector applies to every run in a (R, N, 1) stack."""
        rng = np.random.default_rng(0)
        pred = rng.standard_normal((4, 6, 1))
        targets = rng.standard_normal(6)
        loss, dpred = mse_loss(pred, targets)
        assert loss.shape == (4,)
        assert dpred.shape == (4, 6, 1)
        for r in range(4):
            lr, dr = mse_loss(pred[r], targets)
            assert loss[r] == lr
            np.testing.assert_array_equal(dpred[r], dr)

    def test_mse_per_run_targets(self):
        rng = np.random.default_rng(1)
        pred = rng.standard_normal((2, 5, 1))
        targets = rng.standard_normal((2, 5))
        loss, _ = mse_loss(pred, targets)
        for r in range(2):
            lr, _ = mse_loss(pred[r], targets[r])
            assert loss[r] == lr

    def test_mse_multi_output_sums_components(self):
        pred = np.array([[1.0, 2.0]])
        targets = np.array([[0.0, 0.0]])
        loss, _ = mse_loss(pred, targets)
        assert loss == 5.0

    def test_cross_entropy_uniform_logits(self):
        """Zero logits over C classes give loss log(C) regardless of labels."""
        logits = np.zeros((4, 3))
        labels = np.array([0, 1, 2, 0])
        loss, dlogits = cross_entropy_loss(logits, labels)
        assert loss == pytest.approx(np.log(3.0), rel=1e-15)
        # gradient is (softmax - onehot)/n
        expected = (np.full((4, 3), 1.0 / 3.0) - np.eye(3)[labels]) / 4
        np.testing.assert_allclose(dlogits, expected, rtol=1e-15)

    def test_cross_entropy_shift_invariant(self):
        rng = np.random.default_rng(2)
        logits = rng.standard_normal((5, 4))
        labels = rng.integers(0, 4, size=5)
        l1, _ = cross_entropy_loss(logits, labels)
        l2, _ = cross_entropy_loss(logits + 100.0, labels)
        assert l1 == pytest.approx(l2, rel=1e-12)

    def test_cross_entropy_shared_labels_broadcast(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((3, 5, 4))
        labels = rng.integers(0, 4, size=5)
        loss, _ = cross_entropy_loss(logits, labels)
        assert loss.shape == (3,)
        for r in range(3):
            lr, _ = cross_entropy_loss(logits[r], labels)
            assert loss[r] == pytest.approx(lr, rel=1e-14)

    def test_cross_entropy_rejects_mismatched_labels(self):
        with pytest.raises(ValueError, match="labels shape"):
            cross_entropy_loss(np.zeros((4, 3)), np.zeros(5, dtype=int))

    def test_loss_kinds_registry(self):
        assert LOSS_KINDS == ("mse", "cross_entropy")
        with pytest.raises(ValueError, match="unknown loss kind"):
            loss_and_gradient(
                np.zeros(4), (1, 1, 1), np.ones((1, 1)), np.ones(1), loss="huber"
            )


class TestBackprop:
    """Reverse-mode gradients against central finite differences."""

    @staticmethod
    def fd_grad(flat, widths, X, targets, loss, eps=1e-6):
        g = np.zeros_like(flat)
        for j in range(flat.size):
            up = flat.copy()
            up[j] += eps
            down = flat.copy()
            down[j] -= eps
            lu, _ = loss_and_gradient(up, widths, X, targets, loss=loss)
            ld, _ = loss_and_gradient(down, widths, X, targets, loss=loss)
            g[j] = (lu - ld) / (2 * eps)
        return g

    def test_mse_gradient_matches_fd(self):
        rng = np.random.default_rng(10)
        widths = (2, 5, 3, 1)
        flat = rng.standard_normal(parameter_count(widths))
        X = rng.standard_normal((8, 2))
        targets = rng.standard_normal(8)
        loss, grad = loss_and_gradient(flat, widths, X, targets)
        fd = self.fd_grad(flat, widths, X, targets, "mse")
        scale = max(1.0, np.abs(fd).max())
        assert np.abs(grad - fd).max() < 1e-7 * scale

    def test_cross_entropy_gradient_matches_fd(self):
        rng = np.random.default_rng(11)
        widths = (3, 4, 3)
        flat = rng.standard_normal(parameter_count(widths))
        X = rng.standard_normal((6, 3))
        labels = rng.integers(0, 3, size=6)
        _, grad = loss_and_gradient(flat, widths, X, labels, loss="cross_entropy")
        fd = self.fd_grad(flat, widths, X, labels, "cross_entropy")
        assert np.abs(grad - fd).max() < 1e-7

    def test_weight_decay_gradient(self):
        """Decay adds exactly weight_decay * theta to the gradient."""
        rng = np.random.default_rng(12)
        widths = (2, 3, 1)
        flat = rng.standard_normal(parameter_count(widths))
        X = rng.standard_normal((4, 2))
        targets = rng.standard_normal(4)
        l0, g0 = loss_and_gradient(flat, widths, X, targets)
        l1, g1 = loss_and_gradient(flat, widths, X, targets, weight_decay=0.1)
        assert l1 == pytest.approx(l0 + 0.05 * (flat @ flat), rel=1e-12)
        np.testing.assert_allclose(g1 - g0, 0.1 * flat, rtol=1e-9, atol=1e-12)

    def test_weight_decay_rejects_negative(self):
        with pytest.raises(ValueError, match="weight_decay"):
            loss_and_gradient(
                np.zeros(4), (1, 1, 1), np.ones((1, 1)), np.ones(1), weight_decay=-1.0
            )

    def test_batched_gradient_matches_single(self):
        """(R, P) stacks give bitwise the same per-run gradients as separate calls."""
        rng = np.random.default_rng(13)
        widths = (2, 4, 1)
        stack = rng.standard_normal((3, parameter_count(widths)))
        X = rng.standard_normal((3, 6, 2))
        targets = rng.standard_normal((3, 6))
        loss, grad = loss_and_gradient(stack, widths, X, targets)
        assert loss.shape == (3,) and grad.shape == stack.shape
        for r in range(3):
            lr, gr = loss_and_gradient(stack[r], widths, X[r], targets[r])
            assert loss[r] == lr
            np.testing.assert_array_equal(grad[r], gr)

    def test_relu_subgradient_zero_at_kink(self):
        """relu'(0) = 0: a neuron pinned exactly at 0 passes no gradient."""
        # 1-1-1 net, W0 = 1, b0 = 0, input 0 puts the hidden pre-activation at 0
        flat = np.array([1.0, 0.0, 1.0, 0.0])
        _, grad = loss_and_gradient(
            flat, (1, 1, 1), np.array([[0.0]]), np.array([1.0])
        )
        # d(loss)/dW0 flows through relu'(0) and must vanish
        assert grad[0] == 0.0

    def test_non_finite_loss_raises(self):
        flat = np.array([1e200, 0.0, 1e200, 0.0])
        with np.errstate(over="ignore"), pytest.raises(NumericError, match="non-finite"):
            loss_and_gradient(flat, (1, 1, 1), np.array([[1e200]]), np.array([0.0]))


class TestCheckpoints:
    """Header + raw float64 stream round-trips."""

    def test_roundtrip_exact(self, tmp_path):
        p = kaiming_init(TOY_WIDTHS, np.random.default_rng(7))
        path = tmp_path / "model.ckpt"
        save_checkpoint(p, path)
        q = load_checkpoint(path)
        assert q.widths == p.widths
        np.testing.assert_array_equal(q.flat, p.flat)
        assert q.flat.dtype == np.float64

    def test_header_is_json_line(self, tmp_path):
        p = random_params((2, 3, 1))
        path = tmp_path / "model.ckpt"
        save_checkpoint(p, path)
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
        assert header == {"widths": [2, 3, 1], "count": 13, "dtype": "<f8"}

    def test_body_is_little_endian_float64(self, tmp_path):
        p = MLPParams((1, 1), np.array([1.0, -2.0]))
        path = tmp_path / "model.ckpt"
        save_checkpoint(p, path)
        raw = path.read_bytes()
        body = raw[raw.find(b"\n") + 1:]
        assert body == np.array([1.0, -2.0], dtype="<f8").tobytes()

    def test_float32_params_saved_as_float64(self, tmp_path):
        flat = np.array([0.1, 0.2, 0.3, 0.4], dtype=np.float32)
        p = MLPParams((1, 1, 1), flat)
        path = tmp_path / "model.ckpt"
        save_checkpoint(p, path)
        q = load_checkpoint(path)
        np.testing.assert_array_equal(q.flat, flat.astype(np.float64))

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"\x00" * 64)
        with pytest.raises(ValueError, match="header"):
            load_checkpoint(path)

    def test_malformed_header_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b'{"widths": [1, 1]}\n' + b"\x00" * 16)
        with pytest.raises(ValueError, match="malformed checkpoint header"):
            load_checkpoint(path)

    def test_count_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b'{"widths":[1,1],"count":5,"dtype":"<f8"}\n' + b"\x00" * 40)
        with pytest.raises(ValueError, match="count"):
            load_checkpoint(path)

    def test_truncated_body_rejected(self, tmp_path):
        p = random_params((2, 3, 1))
        path = tmp_path / "model.ckpt"
        save_checkpoint(p, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="body"):
            load_checkpoint(path)

    def test_unsupported_dtype_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b'{"widths":[1,1],"count":2,"dtype":"<f4"}\n' + b"\x00" * 8)
        with pytest.raises(ValueError, match="dtype"):
            load_checkpoint(path)

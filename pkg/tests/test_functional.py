"""Unit tests for the differentiable primitives, parameter containers and the optimizer."""

import math
import unittest

import numpy as np

from projdet.exceptions import CheckpointError, NonFiniteError, ShapeError
from projdet.functional import bilinear_sample, conv2d, layer_norm, linear, softmax
from projdet.layers import Conv2d, LayerNorm, LinearMap, Module, TinyEncoder
from projdet.optim import AdamW
from projdet.tensor import Tensor, parameter
from tests import oracles


class TestBilinearSample(unittest.TestCase):
    """Test bilinear sampling with zero padding."""

    def setUp(self):
        self.rng = np.random.default_rng(7)
        self.fmap = self.rng.normal(size=(3, 4, 5))

    def test_integer_texel(self):
        """Test that an integer coordinate returns the texel."""
        out = bilinear_sample(self.fmap, np.array([2.0, 1.0]))
        np.testing.assert_allclose(out.data, self.fmap[:, 1, 2])

    def test_block_center_is_mean(self):
        """Test that the center of a 2x2 block averages its corners."""
        out = bilinear_sample(self.fmap, np.array([1.5, 2.5]))
        np.testing.assert_allclose(out.data, self.fmap[:, 2:4, 1:3].mean(axis=(1, 2)))

    def test_small_map_against_loop(self):
        """Test the 0..8 map at (0.25, 0.75) against the loop oracle."""
        fmap = np.arange(9.0).reshape(1, 3, 3)
        out = bilinear_sample(fmap, np.array([0.25, 0.75]))
        np.testing.assert_allclose(out.data, oracles.bilinear(fmap, 0.25, 0.75))
        self.assertAlmostEqual(out.data[0], 2.5)

    def test_border_uses_zero_padding(self):
        """Test coordinates partly and fully outside the map."""
        uv = np.array([[-0.5, 0.0], [4.5, 3.0], [-3.0, -3.0], [10.0, 1.0]])
        out = bilinear_sample(self.fmap, uv)
        for n, (u, v) in enumerate(uv):
            np.testing.assert_allclose(out.data[n], oracles.bilinear(self.fmap, u, v), atol=1e-12)
        np.testing.assert_array_equal(out.data[2], np.zeros(3))

    def test_random_points_against_loop(self):
        """Test many random points, in and around the map."""
        uv = self.rng.uniform([-1.0, -1.0], [5.0, 4.0], size=(40, 2))
        out = bilinear_sample(self.fmap, uv)
        expected = np.array([oracles.bilinear(self.fmap, u, v) for u, v in uv])
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_linear_in_feature_map(self):
        """Test linearity in the feature map."""
        other = self.rng.normal(size=self.fmap.shape)
        uv = self.rng.uniform(-0.5, 4.0, size=(6, 2))
        combined = bilinear_sample(2.0 * self.fmap - 0.5 * other, uv).data
        separate = 2.0 * bilinear_sample(self.fmap, uv).data - 0.5 * bilinear_sample(other, uv).data
        np.testing.assert_allclose(combined, separate, atol=1e-10)

    def test_coordinate_gradient(self):
        """Test that the coordinate gradient on a linear ramp is its slope."""
        fmap = np.fromfunction(lambda c, y, x: 2.0 * x + 3.0 * y, (1, 4, 4))
        uv = parameter([[1.3, 1.6]])
        bilinear_sample(fmap, uv).sum().backward()
        np.testing.assert_allclose(uv.grad, [[2.0, 3.0]])

    def test_non_finite_coordinates(self):
        """Test that NaN coordinates are rejected."""
        with self.assertRaises(NonFiniteError):
            bilinear_sample(self.fmap, np.array([np.nan, 0.0]))

    def test_empty_map(self):
        """Test that an empty map is rejected."""
        with self.assertRaises(ShapeError):
            bilinear_sample(np.zeros((1, 0, 3)), np.array([0.0, 0.0]))


class TestSoftmax(unittest.TestCase):
    """Test the softmax primitive."""

    def test_equal_logits(self):
        """Test that equal logits give a uniform distribution."""
        np.testing.assert_allclose(softmax(np.full(5, 0.3)).data, np.full(5, 0.2))

    def test_closed_form(self):
        """Test logits [0, ln 3]."""
        np.testing.assert_allclose(softmax(np.array([0.0, math.log(3.0)])).data, [0.25, 0.75])

    def test_against_formula(self):
        """Test a random vector against exp / sum."""
        logits = np.random.default_rng(1).normal(size=8)
        np.testing.assert_allclose(softmax(logits).data, oracles.softmax(logits), atol=1e-12)

    def test_shift_invariance_and_sum(self):
        """Test shift invariance and normalization on a batch."""
        logits = np.random.default_rng(2).normal(size=(3, 6)) * 10.0
        out = softmax(logits).data
        np.testing.assert_allclose(out.sum(axis=-1), np.ones(3), atol=1e-6)
        np.testing.assert_allclose(softmax(logits + 123.0).data, out, atol=1e-6)

    def test_non_finite_logits(self):
        """Test that infinite logits are rejected."""
        with self.assertRaises(NonFiniteError):
            softmax(np.array([0.0, np.inf]))


class TestLayers(unittest.TestCase):
    """Test linear maps, convolutions, normalization and module traversal."""

    def test_linear_matches_matmul(self):
        """Test the affine map on a batch."""
        rng = np.random.default_rng(0)
        w, b, x = rng.normal(size=(4, 3)), rng.normal(size=4), rng.normal(size=(2, 5, 3))
        out = linear(x, Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, x @ w.T + b)
        with self.assertRaises(ShapeError):
            linear(np.ones((2, 2)), Tensor(w))

    def test_linear_map_from_arrays(self):
        """Test explicit construction and its validation."""
        layer = LinearMap.from_arrays(np.eye(2), np.array([1.0, -1.0]))
        np.testing.assert_allclose(layer(np.array([3.0, 4.0])).data, [4.0, 3.0])
        self.assertEqual((layer.in_features, layer.out_features), (2, 2))
        with self.assertRaises(NonFiniteError):
            LinearMap.from_arrays(np.array([[np.nan]]))
        with self.assertRaises(ShapeError):
            LinearMap.from_arrays(np.eye(2), np.zeros(3))

    def test_conv2d_against_loop(self):
        """Test the same-padded convolution against a direct sum."""
        rng = np.random.default_rng(4)
        x, w, b = rng.normal(size=(2, 4, 3)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
        out = conv2d(x, Tensor(w), Tensor(b)).data
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        for o in range(3):
            for y in range(4):
                for xx in range(3):
                    expected = np.sum(w[o] * padded[:, y:y + 3, xx:xx + 3]) + b[o]
                    self.assertAlmostEqual(out[o, y, xx], expected, places=10)

    def test_conv2d_rejects_even_kernel(self):
        """Test kernel validation."""
        with self.assertRaises(ShapeError):
            conv2d(np.ones((1, 3, 3)), Tensor(np.ones((1, 1, 2, 2))))

    def test_identity_conv(self):
        """Test the identity initialization of a 1x1 convolution."""
        x = np.random.default_rng(5).normal(size=(3, 2, 2))
        np.testing.assert_allclose(Conv2d(3, 3, 1, init="identity")(x).data, x)

    def test_layer_norm_statistics(self):
        """Test zero mean and unit variance per row."""
        x = Tensor(np.random.default_rng(6).normal(size=(4, 8)) * 3.0 + 1.0)
        out = LayerNorm(8)(x).data
        np.testing.assert_allclose(out.mean(axis=-1), np.zeros(4), atol=1e-10)
        np.testing.assert_allclose(out.var(axis=-1), np.ones(4), atol=1e-3)
        out2 = layer_norm(x, Tensor(np.full(8, 2.0)), Tensor(np.ones(8))).data
        np.testing.assert_allclose(out2, 2.0 * out + 1.0, atol=1e-10)

    def test_named_parameters_order_and_state_dict(self):
        """Test parameter discovery and state round trip with validation."""
        rng = np.random.default_rng(0)
        encoder = TinyEncoder(2, 3, rng, hidden=4)
        names = [name for name, _ in encoder.named_parameters()]
        self.assertEqual(names, ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"])
        state = encoder.state_dict()
        other = TinyEncoder(2, 3, np.random.default_rng(1), hidden=4)
        other.load_state_dict(state)
        np.testing.assert_array_equal(other.conv1.weight.data, encoder.conv1.weight.data)
        with self.assertRaises(CheckpointError):
            other.load_state_dict({"conv1.weight": state["conv1.weight"]})
        state["conv2.bias"] = np.zeros(5)
        with self.assertRaises(CheckpointError):
            other.load_state_dict(state)

    def test_module_lists_are_traversed(self):
        """Test that lists of modules contribute indexed names."""

        class Stack(Module):
            def __init__(self):
                self.blocks = [LinearMap(2, 2, init="zeros"), LinearMap(2, 1, init="zeros")]
                self._hidden = LinearMap(2, 2)

        names = [name for name, _ in Stack().named_parameters()]
        self.assertEqual(names, ["blocks.0.weight", "blocks.0.bias", "blocks.1.weight", "blocks.1.bias"])


class TestAdamW(unittest.TestCase):
    """Test the optimizer."""

    def test_minimizes_quadratic(self):
        """Test convergence on a simple quadratic."""
        x = parameter([3.0, -2.0])
        optimizer = AdamW([x], lr=0.1, weight_decay=0.0)
        for _ in range(300):
            optimizer.zero_grad()
            ((x - 1.0) * (x - 1.0)).sum().backward()
            optimizer.step()
        np.testing.assert_allclose(x.data, [1.0, 1.0], atol=5e-2)

    def test_returns_pre_clip_norm(self):
        """Test that step reports the unclipped norm and that clipping bounds the first move."""
        x = parameter([0.0, 0.0])
        x.grad = np.array([30.0, 40.0])
        optimizer = AdamW([x], lr=0.5, weight_decay=0.0, max_grad_norm=1.0)
        self.assertAlmostEqual(optimizer.step(), 50.0)
        # the first Adam step moves each coordinate by about lr
        np.testing.assert_allclose(np.abs(x.data), [0.5, 0.5], atol=1e-6)

    def test_skips_parameters_without_gradient(self):
        """Test that parameters without gradients are untouched."""
        x = parameter([1.0])
        AdamW([x], lr=0.1, weight_decay=0.5).step()
        np.testing.assert_array_equal(x.data, [1.0])


if __name__ == '__main__':
    unittest.main()

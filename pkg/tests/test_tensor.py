"""Unit tests for the tensor tape and the tensor file format."""

import os
import tempfile
import unittest

import numpy as np

from projdet.exceptions import CheckpointError, ShapeError
from projdet.tensor import (Tensor, concat, einsum, exp, getitem, log_sigmoid, no_grad, parameter, scale_gradient,
                            stack, where)
from projdet.tensor_io import dumps, load_tensor, loads, save_tensor


class TestTape(unittest.TestCase):
    """Test gradient recording and accumulation."""

    def test_docstring_example(self):
        """Test the gradient of a scaled sum."""
        w = parameter(np.ones((2, 3)))
        (w * 2.0).sum().backward()
        np.testing.assert_array_equal(w.grad, np.full((2, 3), 2.0))

    def test_broadcast_gradient_is_reduced(self):
        """Test that a broadcast bias receives the summed gradient."""
        x = parameter(np.arange(6.0).reshape(2, 3))
        b = parameter(np.zeros(3))
        (x + b).sum().backward()
        np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])

    def test_shared_input_accumulates(self):
        """Test that a tensor used twice gets both contributions."""
        x = parameter([3.0])
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [6.0])

    def test_repeated_index_accumulates(self):
        """Test that fancy indexing with repeats scatters with addition."""
        x = parameter(np.arange(4.0))
        getitem(x, np.array([1, 1, 3])).sum().backward()
        np.testing.assert_array_equal(x.grad, [0.0, 2.0, 0.0, 1.0])

    def test_where_routes_gradient(self):
        """Test that where sends the gradient to the selected branch only."""
        a, b = parameter(np.ones(3)), parameter(np.ones(3))
        where(np.array([True, False, True]), a, b).sum().backward()
        np.testing.assert_array_equal(a.grad, [1.0, 0.0, 1.0])
        np.testing.assert_array_equal(b.grad, [0.0, 1.0, 0.0])

    def test_einsum_matches_numpy(self):
        """Test two-operand einsum forward and gradient against matmul."""
        rng = np.random.default_rng(0)
        a, b = parameter(rng.normal(size=(3, 4))), parameter(rng.normal(size=(4, 2)))
        out = einsum("ij,jk->ik", a, b)
        np.testing.assert_allclose(out.data, a.data @ b.data)
        out.sum().backward()
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T)

    def test_einsum_rejects_implicit_form(self):
        """Test that einsum needs an explicit output."""
        with self.assertRaises(ShapeError):
            einsum("ij,jk", Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))

    def test_concat_and_stack_split_gradients(self):
        """Test concat and stack backward passes."""
        a, b = parameter(np.ones((1, 2))), parameter(np.ones((2, 2)))
        (concat([a, b], axis=0) * np.arange(6.0).reshape(3, 2)).sum().backward()
        np.testing.assert_array_equal(a.grad, [[0.0, 1.0]])
        np.testing.assert_array_equal(b.grad, [[2.0, 3.0], [4.0, 5.0]])
        c, d = parameter(np.zeros(2)), parameter(np.zeros(2))
        (stack([c, d], axis=1) * np.array([[1.0, 2.0], [3.0, 4.0]])).sum().backward()
        np.testing.assert_array_equal(d.grad, [2.0, 4.0])

    def test_log_sigmoid_is_stable(self):
        """Test log-sigmoid for large magnitudes."""
        x = Tensor(np.array([-800.0, 0.0, 800.0]))
        out = log_sigmoid(x).data
        self.assertTrue(np.all(np.isfinite(out)))
        self.assertAlmostEqual(out[1], np.log(0.5))
        self.assertAlmostEqual(out[0], -800.0)

    def test_scale_gradient(self):
        """Test the identity-forward gradient scaler."""
        x = parameter([1.0, 2.0])
        out = scale_gradient(exp(x), 1.5)
        np.testing.assert_array_equal(out.data, np.exp(x.data))
        out.sum().backward()
        np.testing.assert_allclose(x.grad, 1.5 * np.exp(x.data))

    def test_no_grad_records_nothing(self):
        """Test that no_grad results are plain leaves."""
        x = parameter([1.0])
        with no_grad():
            y = x * 2.0
        self.assertFalse(y.requires_grad)

    def test_backward_needs_gradient_for_vectors(self):
        """Test that backward from a vector requires an explicit gradient."""
        with self.assertRaises(ShapeError):
            (parameter([1.0, 2.0]) * 2.0).backward()

    def test_item_needs_single_element(self):
        """Test item() on a vector."""
        self.assertEqual(Tensor([4.0]).item(), 4.0)
        with self.assertRaises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_integer_input_becomes_float(self):
        """Test that integer and boolean arrays are stored as float64."""
        self.assertEqual(Tensor(np.array([True, False])).data.dtype, np.float64)
        self.assertEqual(Tensor([1, 2]).data.dtype, np.float64)


class TestTensorFormat(unittest.TestCase):
    """Test the JSON-header tensor format."""

    def test_header_line(self):
        """Test the header fields."""
        blob = dumps(np.zeros((2, 3)))
        header = blob.split(b"\n", 1)[0].decode("ascii")
        self.assertIn('"format": "projdet-tensor"', header)
        self.assertIn('"shape": [2, 3]', header)
        self.assertIn('"dtype": "<f8"', header)
        self.assertEqual(len(blob) - len(header) - 1, 48)

    def test_file_round_trip(self):
        """Test save and load through a file."""
        values = np.random.default_rng(3).normal(size=(2, 4, 5))
        with tempfile.TemporaryDirectory() as tmp:
            path = save_tensor(os.path.join(tmp, "x.tensor"), values)
            loaded = load_tensor(path)
        np.testing.assert_array_equal(loaded.data, values)

    def test_truncated_payload(self):
        """Test that a short payload is rejected."""
        with self.assertRaises(CheckpointError):
            loads(dumps(np.ones(4))[:-3])

    def test_missing_header(self):
        """Test that a blob without a header line is rejected."""
        with self.assertRaises(CheckpointError):
            loads(b"no header here")

    def test_missing_file(self):
        """Test reading a file that does not exist."""
        with self.assertRaises(CheckpointError):
            load_tensor("/nonexistent/dir/x.tensor")


if __name__ == '__main__':
    unittest.main()

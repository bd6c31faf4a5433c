"""Unit tests for finite-difference gradient checking and the built-in suite."""

import itertools
import unittest

import numpy as np

from projdet.exceptions import GradCheckError
from projdet.functional import bilinear_sample, linear
from projdet.gradcheck import CheckSuite, default_suite, grad_check
from projdet.tensor import Tensor, parameter


class TestGradCheck(unittest.TestCase):
    """Test grad_check on small operations."""

    def test_linear_map_sum(self):
        """Test the sum of a linear map output with a random 4x3 weight."""
        rng = np.random.default_rng(0)
        x, w, b = parameter(rng.normal(size=(2, 3))), parameter(rng.normal(size=(4, 3))), parameter(np.zeros(4))
        report = grad_check(lambda: linear(x, w, b).sum(), [x, w, b], epsilon=1e-5)
        self.assertTrue(report.passed)
        self.assertLess(report.max_rel_error, 1e-6)
        self.assertEqual(set(report.per_input), {"input0", "input1", "input2"})

    def test_constant_function(self):
        """Test that a constant op passes with zero gradients."""
        x = parameter([1.0, 2.0])
        report = grad_check(lambda: Tensor(3.0), [x])
        self.assertTrue(report.passed)
        self.assertEqual(report.max_rel_error, 0.0)

    def test_inputs_are_restored(self):
        """Test that perturbed inputs get their original values back."""
        x = parameter(np.random.default_rng(1).normal(size=(3, 2)))
        before = x.data.copy()
        grad_check(lambda: (x * x).sum(), [x], names=["x"])
        np.testing.assert_array_equal(x.data, before)
        self.assertIsNone(x.grad)

    def test_wrong_gradient_fails(self):
        """Test that an op with a corrupted backward is caught."""
        from projdet.tensor import scale_gradient

        x = parameter([0.3, -0.7])
        report = grad_check(lambda: scale_gradient((x * x).sum(), 1.5), [x])
        self.assertFalse(report.passed)
        self.assertGreater(report.max_rel_error, 0.1)

    def test_non_repeatable_op(self):
        """Test that a nondeterministic op is an error."""
        counter = itertools.count()
        x = parameter([1.0])
        with self.assertRaises(GradCheckError):
            grad_check(lambda: x.sum() + float(next(counter)), [x])

    def test_bilinear_coordinates(self):
        """Test bilinear sampling gradients away from texel boundaries."""
        rng = np.random.default_rng(2)
        fmap = parameter(rng.normal(size=(2, 3, 3)))
        uv = parameter([[0.3, 1.4], [1.7, 0.2]])
        report = grad_check(lambda: (bilinear_sample(fmap, uv) * np.array([1.0, -2.0])).sum(), [fmap, uv])
        self.assertTrue(report.passed, report.per_input)


class TestSuite(unittest.TestCase):
    """Test the built-in check suite."""

    @classmethod
    def setUpClass(cls):
        cls.suite = default_suite(seed=0)

    def test_names(self):
        """Test that every documented check is registered."""
        for name in ("bilinear", "softmax_last_axis", "multi_head_attention", "heatmap_focal_loss",
                     "projective_attention", "decoder_loss"):
            self.assertIn(name, self.suite.names)

    def test_all_checks_pass(self):
        """Test the full suite at tolerance 1e-4."""
        reports = self.suite.run()
        failed = {r.name: r.max_rel_error for r in reports if not r.passed}
        self.assertEqual(failed, {})
        self.assertEqual(len(reports), len(self.suite.names))

    def test_corrupted_check_fails(self):
        """Test the negative control on one check."""
        reports = self.suite.run(only=["softmax_last_axis", "bilinear"], corrupt="softmax_last_axis")
        by_name = {r.name: r for r in reports}
        self.assertFalse(by_name["softmax_last_axis"].passed)
        self.assertTrue(by_name["bilinear"].passed)

    def test_zero_weight_model(self):
        """Test the decoder check with every weight set to zero."""
        reports = default_suite(seed=0, zero_weights=True).run(only=["decoder_loss"])
        self.assertTrue(reports[0].passed, reports[0].per_input)

    def test_register_uses_function_name(self):
        """Test custom registration."""
        suite = CheckSuite(seed=3)

        @suite.register
        def square(rng, hook):
            x = parameter(rng.normal(size=3))
            return lambda: hook((x * x).sum()), [x], ["x"]

        self.assertEqual(suite.names, ["square"])
        self.assertTrue(suite.run()[0].passed)
        self.assertFalse(suite.run(corrupt="square")[0].passed)


if __name__ == '__main__':
    unittest.main()

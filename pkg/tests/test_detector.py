"""Unit tests for box decoding, set matching, the loss and the full model."""

import itertools
import math
import os
import tempfile
import unittest
from unittest import mock

import numpy as np

from projdet.bev_init import BevGridSpec
from projdet.detector import (Box3D, DecoderConfig, Detector, LayerOutput, TrainSample, assign, decode_boxes,
                              detection_loss, feature_pyramid, hungarian_match, load_checkpoint, normalize_yaw,
                              past_record, save_checkpoint, sigmoid_focal_loss, train_step)
from projdet.exceptions import CheckpointError, ConfigError, GeometryError, NonFiniteError
from projdet.optim import AdamW
from projdet.tensor import Tensor
from projdet.training import build_detector
from tests.fixtures import tiny_config, tiny_frames


class TestBoxes(unittest.TestCase):
    """Test box construction and decoding."""

    def test_normalize_yaw(self):
        """Test wrapping into (-pi, pi]."""
        self.assertAlmostEqual(normalize_yaw(1.5 * math.pi), -0.5 * math.pi)
        self.assertAlmostEqual(normalize_yaw(-math.pi), math.pi)
        self.assertAlmostEqual(normalize_yaw(math.pi), math.pi)
        self.assertAlmostEqual(normalize_yaw(0.3 + 4.0 * math.pi), 0.3)

    def test_rejects_degenerate_size(self):
        """Test that zero or negative sizes are rejected."""
        with self.assertRaises(GeometryError):
            Box3D([0.0, 0.0, 0.0], [1.0, 0.0, 1.0])
        with self.assertRaises(GeometryError):
            Box3D([0.0, 0.0, 0.0], [1.0, 1.0, -2.0])

    def test_decode_by_hand(self):
        """Test one regression row against its closed form."""
        reg = np.array([[0.5, -0.2, 0.1, math.log(2.0), 0.0, math.log(0.5), 0.6, -0.2, 1.0, -1.0]])
        logits = np.array([[-1.0, 2.0, 0.0]])
        (box,) = decode_boxes(logits, reg, np.array([[1.0, 2.0, 0.0]]), trust_region=4.0)
        np.testing.assert_allclose(box.center, [1.0 + 4.0 * math.tanh(0.5), 2.0 + 4.0 * math.tanh(-0.2),
                                                4.0 * math.tanh(0.1)])
        np.testing.assert_allclose(box.size, [2.0, 1.0, 0.5])
        self.assertAlmostEqual(box.yaw, math.atan2(0.6, 0.8))
        np.testing.assert_allclose(box.velocity, [1.0, -1.0])
        self.assertEqual(box.class_id, 1)
        self.assertAlmostEqual(box.score, 1.0 / (1.0 + math.exp(-2.0)))

    def test_zero_regression_is_the_reference(self):
        """Test that an all-zero head output is a unit box at the reference center, heading zero."""
        (box,) = decode_boxes(np.zeros((1, 2)), np.zeros((1, 10)), np.array([[3.0, -1.0, 0.5]]))
        np.testing.assert_allclose(box.center, [3.0, -1.0, 0.5])
        np.testing.assert_allclose(box.size, np.ones(3))
        self.assertEqual(box.yaw, 0.0)


class TestMatching(unittest.TestCase):
    """Test the one-to-one assignment."""

    def test_square_against_brute_force(self):
        """Test random 3x3 costs against all six permutations."""
        rng = np.random.default_rng(0)
        for _ in range(20):
            cost = rng.uniform(size=(3, 3))
            best = min(sum(cost[i, p[i]] for i in range(3)) for p in itertools.permutations(range(3)))
            pairs = assign(cost)
            self.assertEqual(len(pairs), 3)
            self.assertAlmostEqual(sum(cost[i, j] for i, j in pairs), best)

    def test_more_predictions_than_truth(self):
        """Test that every ground-truth box gets exactly one prediction."""
        cost = np.array([[5.0, 5.0], [0.1, 9.0], [9.0, 0.2], [1.0, 1.0]])
        self.assertEqual(assign(cost), [(1, 0), (2, 1)])

    def test_empty_and_non_finite(self):
        """Test degenerate cost matrices."""
        self.assertEqual(assign(np.zeros((3, 0))), [])
        with self.assertRaises(NonFiniteError):
            assign(np.array([[np.nan, 1.0]]))

    def test_match_prefers_class_and_position(self):
        """Test matching on decoded boxes."""
        gt = [Box3D([5.0, 0.0, 0.5], [2.0, 4.0, 1.5], class_id=0), Box3D([-5.0, 2.0, 0.5], [1.0, 1.0, 1.8],
                                                                         class_id=1)]
        pred = [Box3D([-4.8, 2.1, 0.5], [1.0, 1.0, 1.0], class_id=1, score=0.9, class_scores=np.array([0.1, 0.9])),
                Box3D([0.0, 0.0, 0.5], [1.0, 1.0, 1.0], class_id=0, score=0.2, class_scores=np.array([0.2, 0.1])),
                Box3D([5.1, 0.2, 0.5], [2.0, 4.0, 1.5], class_id=0, score=0.8, class_scores=np.array([0.8, 0.1]))]
        self.assertEqual(hungarian_match(pred, gt), [(0, 1), (2, 0)])


class TestLoss(unittest.TestCase):
    """Test the set-prediction loss."""

    def setUp(self):
        self.config = DecoderConfig(channels=8, heads=2, n_query=4)
        self.gt = [Box3D([1.0, 1.0, 0.5], [2.0, 4.0, 1.5], 0.3, class_id=2)]
        rng = np.random.default_rng(3)
        self.output = LayerOutput(Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(scale=0.1, size=(4, 10))),
                                  rng.uniform(-2.0, 2.0, size=(4, 3)))

    def test_focal_loss_formula(self):
        """Test the summed focal loss on one entry of each kind."""
        logits, targets = np.array([[0.4, -1.2]]), np.array([[1.0, 0.0]])
        p = 1.0 / (1.0 + np.exp(-logits))
        expected = -(0.25 * (1 - p[0, 0]) ** 2 * math.log(p[0, 0]) + 0.75 * p[0, 1] ** 2 * math.log(1 - p[0, 1]))
        self.assertAlmostEqual(sigmoid_focal_loss(Tensor(logits), targets).item(), expected)

    def test_components_add_up(self):
        """Test that the total is the weighted sum of its components."""
        total, parts = detection_loss([self.output, self.output], self.gt, Tensor(0.7), self.config)
        expected = (self.config.cls_weight * parts["cls"] + self.config.reg_weight * parts["reg"]
                    + self.config.heatmap_weight * 0.7)
        self.assertAlmostEqual(total.item(), expected)
        self.assertAlmostEqual(parts["total"], total.item())
        self.assertGreater(parts["reg"], 0.0)

    def test_no_ground_truth(self):
        """Test that an empty frame has only the classification term."""
        _, parts = detection_loss([self.output], [], None, self.config)
        self.assertEqual(parts["reg"], 0.0)
        self.assertGreater(parts["cls"], 0.0)


class TestDetector(unittest.TestCase):
    """Test the full model on a tiny configuration."""

    def setUp(self):
        self.config = tiny_config()
        self.frames = tiny_frames(self.config)

    def test_forward_shapes(self):
        """Test per-layer outputs and the prediction floor."""
        detector = build_detector(self.config)
        output = detector.forward(self.frames[0])
        self.assertEqual(len(output.layers), 2)
        self.assertEqual(output.final.cls_logits.shape, (6, 3))
        self.assertEqual(output.final.reg.shape, (6, 10))
        self.assertEqual(output.heatmap.values.shape, (8, 8))
        self.assertEqual(output.queries.n_queries, 6)
        for box in detector.predict(self.frames[0], score_floor=0.01):
            self.assertGreaterEqual(box.score, 0.01)

    def test_channel_mismatch(self):
        """Test that unmatched feature widths need the encoder."""
        spec = BevGridSpec((-4.0, 4.0), (-4.0, 4.0), (-1.0, 3.0), (1, 4, 4))
        with self.assertRaises(ConfigError):
            Detector(DecoderConfig(channels=8, heads=2), spec, in_channels=5)
        detector = Detector(DecoderConfig(channels=8, heads=2, use_encoder=True, encoder_hidden=4), spec,
                            in_channels=5)
        self.assertEqual(detector.encoder.conv2.weight.shape[0], 8)

    def test_config_validation(self):
        """Test model hyperparameter checks."""
        with self.assertRaises(ConfigError):
            DecoderConfig(channels=32, heads=3)
        with self.assertRaises(ConfigError):
            DecoderConfig(attn="deformable")
        with self.assertRaises(ConfigError):
            DecoderConfig(layers=0)
        with self.assertRaises(ConfigError):
            DecoderConfig(attn="sca2d", levels=2)

    def test_feature_pyramid(self):
        """Test the pooled levels and a two-level forward pass."""
        maps = [Tensor(np.arange(2 * 4 * 5, dtype=np.float64).reshape(2, 4, 5))]
        pyramid = feature_pyramid(maps, 2)
        self.assertEqual(pyramid[1][0].shape, (2, 2, 2))
        np.testing.assert_allclose(pyramid[1][0].data[0, 0, 0], np.mean([0.0, 1.0, 5.0, 6.0]))
        self.assertIs(feature_pyramid(maps, 1)[0], maps[0])

        config = tiny_config("model.levels=2")
        output = build_detector(config).forward(tiny_frames(config)[0])
        self.assertEqual(output.final.cls_logits.shape, (6, 3))

    def test_temporal_forward_uses_past(self):
        """Test that an enabled temporal model consumes a cached past frame."""
        config = tiny_config("temporal.enabled=on")
        detector = build_detector(config)
        frames = tiny_frames(config)
        features = detector.compute_features(frames[0])
        record = detector.make_record(frames[0], features, detector.forward(frames[0], features))
        self.assertTrue(detector.forward(frames[2], past=record).final.used_past)
        self.assertFalse(build_detector(self.config).forward(frames[2], past=record).final.used_past)

    def test_checkpoint_round_trip(self):
        """Test save, load into a fresh model and the fingerprint check."""
        detector = build_detector(self.config)
        other = Detector(self.config.model, self.config.grid.to_spec(), 8, np.random.default_rng(99))
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(detector, tmp, "abc", {"steps": 0})
            self.assertTrue(os.path.exists(path))
            manifest = load_checkpoint(other, tmp, "abc")
            self.assertEqual(manifest["extra"], {"steps": 0})
            with self.assertRaises(CheckpointError):
                load_checkpoint(other, tmp, "def")
        for (name, a), (_, b) in zip(detector.named_parameters(), other.named_parameters()):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name)
        np.testing.assert_array_equal(detector.forward(self.frames[1]).final.reg.data,
                                      other.forward(self.frames[1]).final.reg.data)

    def test_missing_checkpoint(self):
        """Test loading from an empty directory."""
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(CheckpointError):
                load_checkpoint(build_detector(self.config), tmp)

    def test_overfits_one_frame(self):
        """Test that repeated steps on one frame lower its loss."""
        detector = build_detector(self.config)
        optimizer = AdamW(detector.parameters(), lr=5e-3, weight_decay=0.0, max_grad_norm=10.0)
        frame = next(f for f in self.frames if f.boxes)
        losses = [train_step(detector, [TrainSample(frame)], optimizer, step).total for step in range(40)]
        self.assertTrue(all(np.isfinite(losses)))
        self.assertLess(np.mean(losses[-5:]), np.mean(losses[:5]))


class GradientCapture:
    """Optimizer stand-in that keeps the gradients it is asked to apply."""

    def __init__(self, params):
        self.params = list(params)
        self.grads = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.grads = [None if p.grad is None else p.grad.copy() for p in self.params]
        return 0.0


class TestTemporalTraining(unittest.TestCase):
    """Test that the cached past frame is a constant during a training step."""

    def setUp(self):
        self.config = tiny_config("temporal.enabled=on")
        self.detector = build_detector(self.config)

    def test_record_is_detached(self):
        """Test that cached features and queries carry no gradient tracking."""
        record = past_record(self.detector, tiny_frames(self.config)[0])
        self.assertTrue(record.features)
        for fmap in record.features:
            self.assertFalse(fmap.requires_grad)
        self.assertFalse(record.queries.features.requires_grad)
        self.assertFalse(record.queries.pos_enc.requires_grad)

    def step_gradients(self, perturb):
        frames = tiny_frames(self.config)
        rng = np.random.default_rng(5)

        def record_then_edit(detector, past_frame):
            record = past_record(detector, past_frame)
            if perturb:
                for fmap in past_frame.feature_maps:
                    fmap += rng.normal(size=fmap.shape)
            return record

        capture = GradientCapture(self.detector.parameters())
        with mock.patch("projdet.detector.past_record", side_effect=record_then_edit) as recorded:
            report = train_step(self.detector, [TrainSample(frames[2], frames[0])], capture)
        self.assertEqual(recorded.call_count, 1)
        self.assertTrue(np.isfinite(report.total))
        return capture.grads

    def test_gradients_ignore_later_edits_to_the_past_frame(self):
        """Test identical parameter gradients with and without editing the past maps after caching."""
        plain = self.step_gradients(perturb=False)
        edited = self.step_gradients(perturb=True)
        self.assertTrue(any(g is not None for g in plain))
        for (name, _), a, b in zip(self.detector.named_parameters(), plain, edited):
            if a is None:
                self.assertIsNone(b, name)
            else:
                np.testing.assert_array_equal(a, b, err_msg=name)


if __name__ == '__main__':
    unittest.main()

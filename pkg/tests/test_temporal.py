"""Unit tests for the memory bank and frame pairing."""

import unittest
from collections import Counter
from types import SimpleNamespace

import numpy as np

from projdet.exceptions import TimestampOrderError
from projdet.temporal import FrameRecord, MemoryBank, SequenceRunner, sample_training_pair


def record(t):
    return FrameRecord(t, None, [], None, None)


class CountingDetector:
    """Stand-in model that records which past frame each step received."""

    def __init__(self):
        self.pasts = []

    def compute_features(self, frame):
        return [frame.timestamp]

    def forward(self, frame, features, past):
        self.pasts.append(None if past is None else past.timestamp)
        return features

    def make_record(self, frame, features, output):
        return record(frame.timestamp)


class TestMemoryBank(unittest.TestCase):
    """Test eviction and retrieval."""

    def test_capacity_one(self):
        """Test that a single-slot bank keeps the newest record."""
        bank = MemoryBank(capacity=1, horizon=10.0)
        bank.push(record(0.0)).push(record(0.5))
        self.assertEqual(len(bank), 1)
        self.assertEqual(bank.newest.timestamp, 0.5)

    def test_capacity_evicts_oldest(self):
        """Test that a full bank drops its oldest record."""
        bank = MemoryBank(capacity=4, horizon=10.0)
        for t in (0.0, 0.5, 1.0, 1.5, 2.0):
            bank.push(record(t))
        self.assertEqual([r.timestamp for r in bank.records], [0.5, 1.0, 1.5, 2.0])

    def test_horizon_evicts_stale(self):
        """Test eviction of records older than the horizon."""
        bank = MemoryBank(capacity=8, horizon=2.0)
        bank.push(record(0.0)).push(record(1.0)).push(record(2.5))
        self.assertEqual([r.timestamp for r in bank.records], [1.0, 2.5])

    def test_fetch_closest_age(self):
        """Test retrieval of the record nearest the desired interval."""
        bank = MemoryBank(capacity=8, horizon=10.0)
        for t in (1.0, 1.5, 2.0, 2.5):
            bank.push(record(t))
        self.assertEqual(bank.fetch(3.0, 1.5).timestamp, 1.5)
        self.assertEqual(bank.fetch(3.0, 10.0).timestamp, 1.0)
        self.assertEqual(bank.fetch(3.0, 0.0).timestamp, 2.5)

    def test_fetch_tie_prefers_older(self):
        """Test that an equal gap resolves to the older record."""
        bank = MemoryBank(capacity=8, horizon=10.0)
        bank.push(record(1.0)).push(record(2.0))
        self.assertEqual(bank.fetch(3.0, 1.5).timestamp, 1.0)

    def test_fetch_never_returns_future(self):
        """Test that records newer than the query time are skipped."""
        bank = MemoryBank(capacity=8, horizon=10.0)
        bank.push(record(1.0)).push(record(5.0))
        self.assertEqual(bank.fetch(2.0, 0.0).timestamp, 1.0)

    def test_empty_bank(self):
        """Test fetch on an empty bank."""
        self.assertIsNone(MemoryBank().fetch(1.0))

    def test_out_of_order_push(self):
        """Test that a stale or repeated timestamp is rejected."""
        bank = MemoryBank()
        bank.push(record(1.0))
        with self.assertRaises(TimestampOrderError):
            bank.push(record(1.0))
        with self.assertRaises(TimestampOrderError):
            bank.push(record(0.5))
        self.assertEqual(len(bank), 1)


class TestTrainingPair(unittest.TestCase):
    """Test the training-time past frame draw."""

    def test_first_frame_has_no_past(self):
        """Test a sequence start."""
        self.assertIsNone(sample_training_pair([0.0, 0.5, 1.0], 0, np.random.default_rng(0)))

    def test_single_candidate(self):
        """Test that the only eligible frame is always drawn."""
        rng = np.random.default_rng(0)
        self.assertEqual({sample_training_pair([0.0, 2.5, 3.0], 2, rng) for _ in range(20)}, {1})

    def test_uniform_within_window(self):
        """Test uniformity over 10^4 draws in a 2 s window."""
        rng = np.random.default_rng(1)
        times = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5]
        counts = Counter(sample_training_pair(times, 5, rng, window=2.0) for _ in range(10000))
        self.assertEqual(set(counts), {1, 2, 3, 4})
        for n in counts.values():
            self.assertAlmostEqual(n / 10000.0, 0.25, delta=0.02)


class TestSequenceRunner(unittest.TestCase):
    """Test sequential inference with a cached past."""

    def setUp(self):
        self.frames = [SimpleNamespace(timestamp=0.5 * k) for k in range(6)]

    def test_features_computed_once_per_frame(self):
        """Test the feature computation count and the chosen past frames."""
        detector = CountingDetector()
        runner = SequenceRunner(detector, interval=1.0, capacity=8, horizon=2.5)
        outputs = runner.run(self.frames)
        self.assertEqual(len(outputs), 6)
        self.assertEqual(runner.feature_calls, 6)
        self.assertEqual(detector.pasts, [None, 0.0, 0.0, 0.5, 1.0, 1.5])

    def test_single_frame_mode(self):
        """Test that temporal off never passes a past frame."""
        detector = CountingDetector()
        SequenceRunner(detector, temporal=False).run(self.frames)
        self.assertEqual(detector.pasts, [None] * 6)


if __name__ == '__main__':
    unittest.main()

"""Unit tests for the detection metrics."""

import csv
import os
import tempfile
import unittest

import numpy as np

from projdet.detector import Box3D
from projdet.exceptions import ProjdetError
from projdet.metrics import ATE_CAP, AVE_CAP, average_precision, evaluate, match_greedy, write_report_csv


def box(x, y, score=1.0, class_id=0, velocity=(0.0, 0.0)):
    return Box3D([x, y, 0.5], [2.0, 4.0, 1.5], velocity=velocity, class_id=class_id, score=score)


class TestAveragePrecision(unittest.TestCase):
    """Test matching and AP on hand-checked cases."""

    def setUp(self):
        self.gts = [[box(0.0, 0.0), box(10.0, 0.0)]]
        self.preds = [[box(0.3, 0.0, 0.9), box(20.0, 0.0, 0.8), box(10.5, 0.0, 0.7)]]

    def test_perfect_predictions(self):
        """Test that predictions equal to the ground truth score AP 1 and zero errors."""
        gts = [[box(1.0, 2.0, velocity=(1.0, 0.0)), box(-3.0, 4.0, class_id=1)], [box(5.0, 5.0)]]
        report = evaluate(gts, gts)
        for value in report.ap_at_thresholds.values():
            self.assertEqual(value, 1.0)
        self.assertEqual(report.mean_ate, 0.0)
        self.assertEqual(report.mean_ave, 0.0)
        self.assertEqual(report.recall, 1.0)
        self.assertEqual(report.n_true_positives, 3)

    def test_no_predictions(self):
        """Test that empty predictions give AP 0 and capped errors."""
        report = evaluate([[]], self.gts)
        self.assertEqual(report.mean_ap, 0.0)
        self.assertEqual(report.recall, 0.0)
        self.assertEqual((report.mean_ate, report.mean_ave), (ATE_CAP, AVE_CAP))

    def test_two_truths_three_predictions(self):
        """Test the decision list and 11-point AP by hand."""
        decisions, n_gt = match_greedy(self.preds, self.gts, 1.0)
        self.assertEqual(n_gt, 2)
        self.assertEqual([(d[1], d[4]) for d in decisions], [(True, 0), (False, -1), (True, 1)])
        # recall 0.5 at precision 1, then recall 1 at precision 2/3
        self.assertAlmostEqual(average_precision([d[1] for d in decisions], n_gt), (6.0 + 5.0 * 2.0 / 3.0) / 11.0)

        report = evaluate(self.preds, self.gts, thresholds=(0.4, 1.0, 4.0))
        self.assertAlmostEqual(report.ap(0.4), 6.0 / 11.0)
        self.assertAlmostEqual(report.ap(1.0), (6.0 + 5.0 * 2.0 / 3.0) / 11.0)
        self.assertAlmostEqual(report.mean_ate, 0.4)
        self.assertEqual(report.recall, 1.0)

    def test_ap_grows_with_threshold(self):
        """Test that looser thresholds never lower AP on the hand case."""
        report = evaluate(self.preds, self.gts, thresholds=(0.2, 0.4, 1.0, 4.0))
        values = [report.ap(t) for t in (0.2, 0.4, 1.0, 4.0)]
        self.assertEqual(values, sorted(values))
        self.assertEqual(values[0], 0.0)

    def test_duplicates_do_not_help(self):
        """Test that a duplicate of a true positive is a false positive."""
        duplicated = [self.preds[0] + [box(0.3, 0.0, 0.85)]]
        self.assertLessEqual(evaluate(duplicated, self.gts).ap(1.0), evaluate(self.preds, self.gts).ap(1.0))

    def test_class_awareness(self):
        """Test that a wrong class only matches when classes are ignored."""
        preds = [[box(0.0, 0.0, class_id=1)]]
        gts = [[box(0.0, 0.0, class_id=0)]]
        self.assertEqual(evaluate(preds, gts).mean_ap, 0.0)
        self.assertEqual(evaluate(preds, gts, class_aware=False).mean_ap, 1.0)

    def test_velocity_error(self):
        """Test the mean velocity error of true positives."""
        report = evaluate([[box(0.0, 0.0, velocity=(3.0, 4.0))]], [[box(0.0, 0.0)]])
        self.assertAlmostEqual(report.mean_ave, 5.0)

    def test_frame_count_mismatch(self):
        """Test that prediction and ground-truth frames must pair up."""
        with self.assertRaises(ProjdetError):
            evaluate([[], []], self.gts)


class TestReportCsv(unittest.TestCase):
    """Test report serialization."""

    def test_rows_and_columns(self):
        """Test the column set of a report row written to CSV."""
        report = evaluate([[box(0.0, 0.0)]], [[box(0.0, 0.0)]], thresholds=(0.5, 2.0))
        report.extras["query_recall"] = 0.5
        row = dict(report.to_row(), variant="a")
        with tempfile.TemporaryDirectory() as tmp:
            path = write_report_csv(os.path.join(tmp, "report.csv"), [row])
            with open(path, newline="") as f:
                rows = list(csv.DictReader(f))
        self.assertEqual(list(rows[0]), ["ap@0.5", "ap@2", "map", "ate", "ave", "recall", "tp", "gt",
                                         "query_recall", "variant"])
        self.assertEqual(float(rows[0]["map"]), 1.0)
        np.testing.assert_allclose(float(rows[0]["query_recall"]), 0.5)

    def test_unwritable_path(self):
        """Test the error on a missing directory."""
        with self.assertRaises(ProjdetError):
            write_report_csv("/nonexistent/dir/report.csv", [{"a": 1}])


if __name__ == '__main__':
    unittest.main()

import unittest

import numpy as np
import numpy.testing as npt

from errors import EmptyDataError, InvalidArgumentError, ShapeMismatchError
from metrics import (
    TABLE_COLUMNS,
    MetricsTable,
    classification_per_timestamp,
    classification_scores,
    rmse_per_timestamp,
    summarize,
    summary_frame,
)


def quantile_type7(values, q):
    s = sorted(values)
    h = (len(s) - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


class TestRmse(unittest.TestCase):
    def test_examples(self):
        npt.assert_array_equal(rmse_per_timestamp(np.ones((3, 2)), np.ones((3, 2))), [0, 0, 0])
        npt.assert_allclose(rmse_per_timestamp([[0.0, 0.0]], [[3.0, 4.0]]), [np.sqrt(12.5)])

    def test_horizon_is_pooled(self):
        pred = np.zeros((1, 2, 2))
        target = np.array([[[1.0, 1.0], [1.0, 5.0]]])
        npt.assert_allclose(rmse_per_timestamp(pred, target), [np.sqrt(7.0)])

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            rmse_per_timestamp(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            b, n = int(rng.integers(1, 6)), int(rng.integers(1, 8))
            pred, target = rng.normal(size=(b, n)), rng.normal(size=(b, n))
            expected = [np.sqrt(sum((p - t) ** 2 for p, t in zip(pr, tr)) / n) for pr, tr in zip(pred, target)]
            npt.assert_allclose(rmse_per_timestamp(pred, target), expected, rtol=0, atol=1e-12)


class TestSummary(unittest.TestCase):
    def test_single_value(self):
        s = summarize([5.0])
        self.assertEqual(
            (s.mean, s.std, s.min, s.max, s.q1, s.median, s.q3), (5.0, 0.0, 5.0, 5.0, 5.0, 5.0, 5.0)
        )

    def test_four_values(self):
        s = summarize([1, 2, 3, 4])
        self.assertEqual((s.mean, s.min, s.max, s.median), (2.5, 1.0, 4.0, 2.5))
        self.assertEqual((s.q1, s.q3), (1.75, 3.25))

    def test_empty(self):
        with self.assertRaises(EmptyDataError):
            summarize([])

    def test_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            values = list(rng.normal(size=int(rng.integers(1, 30))))
            s = summarize(values)
            mean = sum(values) / len(values)
            std = np.sqrt(sum((v - mean) ** 2 for v in values) / len(values))
            self.assertAlmostEqual(s.mean, mean, delta=1e-12)
            self.assertAlmostEqual(s.std, std, delta=1e-12)
            for q, got in ((0.25, s.q1), (0.5, s.median), (0.75, s.q3)):
                self.assertAlmostEqual(got, quantile_type7(values, q), delta=1e-12)

    def test_table(self):
        table = MetricsTable.from_scores([2.0, 4.0])
        self.assertEqual(table.scores, (2.0, 4.0))
        frame = summary_frame([("gcrn", "sliding", table.summary)])
        self.assertEqual(list(frame.columns), TABLE_COLUMNS)
        self.assertEqual(frame.loc[0, "mean"], 3.0)


class TestClassification(unittest.TestCase):
    def test_perfect(self):
        self.assertEqual(classification_scores([0, 1, 1, 0], [0, 1, 1, 0]), (1.0, 1.0, 1.0))

    def test_counts(self):
        # TP=2, FP=1, FN=1
        p, r, f1 = classification_scores([1, 1, 1, 0, 0], [1, 1, 0, 1, 0])
        for value in (p, r, f1):
            self.assertAlmostEqual(value, 2 / 3)

    def test_no_positives(self):
        self.assertEqual(classification_scores([0, 0], [0, 0]), (0.0, 0.0, 0.0))

    def test_rejects_other_labels(self):
        with self.assertRaises(InvalidArgumentError):
            classification_scores([2, 0], [1, 0])

    def test_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(1, 20))
            pred, truth = rng.integers(0, 2, n), rng.integers(0, 2, n)
            tp = int(((pred == 1) & (truth == 1)).sum())
            fp = int(((pred == 1) & (truth == 0)).sum())
            fn = int(((pred == 0) & (truth == 1)).sum())
            precision = tp / (tp + fp) if tp + fp else 0.0
            recall = tp / (tp + fn) if tp + fn else 0.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            got = classification_scores(pred, truth)
            npt.assert_allclose(got, (precision, recall, f1), rtol=0, atol=1e-12)

    def test_f1_is_harmonic_mean(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            n = int(rng.integers(1, 30))
            p, r, f1 = classification_scores(rng.integers(0, 2, n), rng.integers(0, 2, n))
            expected = 2 * p * r / (p + r) if p + r else 0.0
            self.assertAlmostEqual(f1, expected, places=12)
            self.assertLessEqual(f1, max(p, r) + 1e-12)
            self.assertGreaterEqual(f1, min(p, r) - 1e-12)

    def test_per_timestamp(self):
        scores = classification_per_timestamp([[1, 0], [0, 0]], [[1, 0], [1, 0]])
        self.assertEqual(scores["f1"], [1.0, 0.0])
        self.assertEqual(scores["recall"], [1.0, 0.0])


if __name__ == "__main__":
    unittest.main()

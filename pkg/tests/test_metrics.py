import unittest, json, math

import numpy as np

from mlact.core import Dataset, MultiLabelExample, build_vocabulary
from mlact.metrics import (
    REPORT_KEYS,
    average_precision,
    class_average_precisions,
    evaluate_predictions,
    macro_map,
    micro_map,
    top_k_accuracy,
)
from mlact.validate import oracle_macro_map, oracle_micro_map


def make_dataset(label_sets, num_classes):
    vocabulary = build_vocabulary(["c%d" % c for c in range(num_classes)])
    return Dataset(
        vocabulary,
        [MultiLabelExample("e%d" % n, [0.0], labels) for n, labels in enumerate(label_sets)],
    )


class TestAveragePrecision(unittest.TestCase):
    def test_perfect(self):
        self.assertEqual(average_precision([0.9, 0.8, 0.1], {0, 1}), 1.0)

    def test_worst(self):
        # positive ranked last of three
        self.assertAlmostEqual(average_precision([0.1, 0.8, 0.9], {0}), 1.0 / 3.0)

    def test_interleaved(self):
        # positives at positions 1 and 3: (1/1 + 2/3) / 2
        self.assertAlmostEqual(average_precision([0.9, 0.8, 0.7, 0.1], {0, 2}), 5.0 / 6.0)

    def test_ties_by_index(self):
        self.assertEqual(average_precision([0.5, 0.5, 0.5], {0}), 1.0)
        self.assertAlmostEqual(average_precision([0.5, 0.5, 0.5], {2}), 1.0 / 3.0)

    def test_no_positives(self):
        self.assertTrue(math.isnan(average_precision([0.5, 0.1], set())))

    def test_monotone_transform(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            scores = rng.normal(0.0, 1.0, 12)
            positives = set(int(c) for c in rng.choice(12, size=4, replace=False))
            expected = average_precision(scores, positives)
            for transformed in (3.0 * scores - 2.0, np.exp(scores), scores ** 3, np.arctan(scores)):
                self.assertEqual(average_precision(transformed, positives), expected)


class TestTopK(unittest.TestCase):
    def setUp(self):
        self.dataset = make_dataset([{0}, {1}, {2, 3}], 4)
        self.predictions = np.array(
            [
                [0.9, 0.1, 0.0, 0.0],
                [0.9, 0.5, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
            ]
        )

    def test_top1(self):
        self.assertAlmostEqual(top_k_accuracy(self.predictions, self.dataset, 1), 1.0 / 3.0)

    def test_top_k_caps_at_classes(self):
        self.assertEqual(top_k_accuracy(self.predictions, self.dataset, 5), 1.0)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(7)
        label_sets = [set(rng.choice(8, size=int(rng.integers(1, 4)), replace=False)) for _ in range(40)]
        dataset = make_dataset(label_sets, 8)
        predictions = rng.normal(0.0, 1.0, (40, 8))
        accuracies = [top_k_accuracy(predictions, dataset, k) for k in range(1, 10)]
        self.assertEqual(accuracies, sorted(accuracies))
        self.assertEqual(accuracies[-1], 1.0)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            top_k_accuracy(self.predictions, self.dataset, 0)
        with self.assertRaises(ValueError):
            top_k_accuracy(self.predictions[:, :3], self.dataset, 1)


class TestMeanAveragePrecision(unittest.TestCase):
    def test_micro_and_macro_differ(self):
        dataset = make_dataset([{0}, {0}, {1}], 2)
        predictions = np.array([[0.9, 0.1], [0.2, 0.8], [0.3, 0.7]])

        # per example: 1, 1/2, 1
        self.assertAlmostEqual(micro_map(predictions, dataset), 2.5 / 3.0)
        # class 0 ranks e0, e2, e1: (1 + 2/3) / 2; class 1 ranks e1, e2, e0: 1/2
        expected_macro = ((1.0 + 2.0 / 3.0) / 2.0 + 0.5) / 2.0
        self.assertAlmostEqual(macro_map(predictions, dataset), expected_macro)

    def test_head_class_dominates_micro(self):
        # class 0 is on every example; tail class c only on example c, which
        # it scores last of ten
        dataset = make_dataset([{0}] + [{0, c} for c in range(1, 10)], 10)
        predictions = np.ones((10, 10))
        predictions[:, 0] = 2.0
        for c in range(1, 10):
            predictions[c, c] = 0.0

        per_class = class_average_precisions(predictions, dataset)
        self.assertEqual(per_class[0], 1.0)
        np.testing.assert_allclose(per_class[1:], 0.1)
        self.assertAlmostEqual(macro_map(predictions, dataset), 0.19, places=12)
        # examples 1..9 score (1 + 2/10) / 2
        self.assertAlmostEqual(micro_map(predictions, dataset), 0.64, places=12)

    def test_macro_skips_empty_classes(self):
        dataset = make_dataset([{0}, {0}], 3)
        predictions = np.array([[0.9, 0.1, 0.0], [0.8, 0.2, 0.0]])
        per_class = class_average_precisions(predictions, dataset)
        self.assertEqual(per_class[0], 1.0)
        self.assertTrue(math.isnan(per_class[1]))
        self.assertEqual(macro_map(predictions, dataset), 1.0)

    def test_against_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            num_classes = int(rng.integers(2, 8))
            count = int(rng.integers(1, 30))
            label_sets = [
                set(rng.choice(num_classes, size=int(rng.integers(1, num_classes + 1)), replace=False))
                for _ in range(count)
            ]
            dataset = make_dataset(label_sets, num_classes)
            predictions = np.round(rng.normal(0.0, 1.0, (count, num_classes)), 1)
            rows = predictions.tolist()

            self.assertAlmostEqual(
                micro_map(predictions, dataset), oracle_micro_map(rows, dataset), delta=1e-12
            )
            self.assertAlmostEqual(
                macro_map(predictions, dataset), oracle_macro_map(rows, dataset), delta=1e-12
            )


class TestReport(unittest.TestCase):
    def setUp(self):
        dataset = make_dataset([{0}, {1}, {0, 1}], 3)
        predictions = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
        self.report = evaluate_predictions(predictions, dataset)

    def test_oracle_scores(self):
        self.assertEqual(self.report.top1, 1.0)
        self.assertEqual(self.report.micro_map, 1.0)
        self.assertEqual(self.report.macro_map, 1.0)
        self.assertEqual(self.report.per_class_ap, (1.0, 1.0, None))

    def test_json_keys(self):
        data = json.loads(self.report.to_json())
        self.assertEqual(set(data), set(REPORT_KEYS))
        self.assertIsNone(data["per_class_ap"][2])

    def test_csv(self):
        lines = self.report.to_csv().splitlines()
        self.assertEqual(lines[0], "metric,class,value")
        self.assertEqual(lines[1], "top1,,1.0")
        self.assertEqual(lines[-1], "ap,c2,")
        self.assertEqual(len(lines), 1 + 4 + 3)


if __name__ == "__main__":
    unittest.main()

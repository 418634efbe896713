import unittest, math

import numpy as np

from mlact.core import ClassWeights
from mlact.losses import (
    BCE,
    LOSS_NAMES,
    LOSSES,
    LSEP,
    WARP,
    WLSEP,
    batch_loss,
    bce_loss,
    label_mask,
    lsep_loss,
    rank_of,
    rank_weight,
    warp_kinks,
    warp_loss,
    wlsep_loss,
)


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestBCE(unittest.TestCase):
    def test_zero_score(self):
        result = bce_loss([0.0], {0})
        self.assertAlmostEqual(result.value, math.log(2.0), places=12)

    def test_two_classes(self):
        result = bce_loss([2.0, -1.0], {0}, [1.0, 1.0])
        expected = (-math.log(sigmoid(2.0)) - math.log(1.0 - sigmoid(-1.0))) / 2.0
        self.assertAlmostEqual(result.value, expected, places=12)
        self.assertAlmostEqual(result.value, 0.220095, places=6)
        np.testing.assert_allclose(
            result.gradient, [(sigmoid(2.0) - 1.0) / 2.0, sigmoid(-1.0) / 2.0], rtol=1e-12
        )

    def test_saturation(self):
        result = bce_loss([40.0, -40.0], {0}, [1.0, 1.0])
        self.assertTrue(math.isfinite(result.value))
        self.assertLess(result.value, 1e-15)
        self.assertTrue(np.all(np.isfinite(result.gradient)))

    def test_weights(self):
        plain = bce_loss([0.5, -0.3, 1.2], {1})
        weighted = bce_loss([0.5, -0.3, 1.2], {1}, ClassWeights([2.0, 2.0, 2.0]))
        self.assertAlmostEqual(weighted.value, 2.0 * plain.value, places=12)


class TestRank(unittest.TestCase):
    def test_rank_of(self):
        self.assertEqual(rank_of([5.0, 1.0, 0.0], 0), 1)
        self.assertEqual(rank_of([0.0, 0.0, 0.0], 2), 1)
        self.assertEqual(rank_of([0.0, 2.0, 0.5], 0), 3)

    def test_rank_of_bounds(self):
        with self.assertRaises(ValueError):
            rank_of([0.0, 1.0], 2)

    def test_rank_weight(self):
        self.assertEqual(rank_weight(1), 1.0)
        self.assertAlmostEqual(rank_weight(2), 1.5)
        self.assertAlmostEqual(rank_weight(4), 25.0 / 12.0)
        with self.assertRaises(ValueError):
            rank_weight(0)


class TestWARP(unittest.TestCase):
    def test_well_separated(self):
        result = warp_loss([3.0, 0.0, -1.0], {0})
        self.assertEqual(result.value, 0.0)
        np.testing.assert_array_equal(result.gradient, [0.0, 0.0, 0.0])

    def test_single_violation(self):
        # positive 0 has rank 2 (class 1 scores higher): H_2 * (1 + 0.5 - 0)
        result = warp_loss([0.0, 0.5, -5.0], {0})
        self.assertAlmostEqual(result.value, 1.5 * 1.5)
        np.testing.assert_allclose(result.gradient, [-1.5, 1.5, 0.0])

    def test_kink_has_zero_subgradient(self):
        # margin 1 + x_1 - x_0 is exactly zero
        result = warp_loss([1.0, 0.0], {0})
        self.assertEqual(result.value, 0.0)
        np.testing.assert_array_equal(result.gradient, [0.0, 0.0])

    def test_kinks_flagged(self):
        flags = warp_kinks([1.0, 0.0, -3.0], {0}, 1e-5)
        self.assertEqual(flags.tolist(), [True, True, False])

    def test_tied_pair(self):
        self.assertEqual(warp_loss([0.0, 0.0], {0}, [1.0, 1.0]).value, 1.0)

    def test_rank_weighted_hinges(self):
        # rank 3 gives H_3 = 11/6, hinges 3 + 1.5
        result = warp_loss([0.0, 2.0, 0.5], {0}, [1.0, 1.0, 1.0])
        self.assertAlmostEqual(result.value, 8.25, places=12)

    def test_no_negatives(self):
        with self.assertRaisesRegex(ValueError, "no negative classes"):
            warp_loss([0.0, 1.0], {0, 1})


class TestLSEP(unittest.TestCase):
    def test_value(self):
        result = lsep_loss([1.0, 0.0, 2.0], {0})
        expected = math.log(1.0 + math.exp(-1.0) + math.exp(1.0))
        self.assertAlmostEqual(result.value, expected, places=12)

    def test_gradient_sums_to_zero(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(0.0, 2.0, 12)
        result = lsep_loss(scores, {1, 4, 7})
        self.assertAlmostEqual(float(result.gradient.sum()), 0.0, places=12)

    def test_large_scores(self):
        result = lsep_loss([-500.0, 500.0, 500.0], {0})
        self.assertAlmostEqual(result.value, 1000.0 + math.log(2.0), places=9)
        self.assertTrue(np.all(np.isfinite(result.gradient)))

    def test_registry_ignores_weights(self):
        scores = [0.2, -0.4, 1.0]
        self.assertEqual(
            LOSSES["lsep"](scores, {2}, [5.0, 5.0, 5.0]).value, lsep_loss(scores, {2}).value
        )


class TestWeightedLSEP(unittest.TestCase):
    def test_reduces_to_lsep(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            scores = rng.normal(0.0, 2.0, 8)
            label = {int(rng.integers(8))}
            plain = lsep_loss(scores, label)
            weighted = wlsep_loss(scores, label, np.ones(8))
            self.assertAlmostEqual(plain.value, weighted.value, delta=1e-12)
            np.testing.assert_allclose(plain.gradient, weighted.gradient, atol=1e-12)

    def test_per_positive_average(self):
        scores = np.array([1.0, 0.5, -1.0])
        weights = np.array([2.0, 4.0, 1.0])
        result = wlsep_loss(scores, {0, 1}, weights)
        expected = (
            2.0 * math.log(1.0 + math.exp(-2.0)) + 4.0 * math.log(1.0 + math.exp(-1.5))
        ) / 2.0
        self.assertAlmostEqual(result.value, expected, places=12)

    def test_large_scores(self):
        result = wlsep_loss([-500.0, 500.0, 0.0], {0, 2}, [10.0, 0.1, 1.0])
        self.assertTrue(math.isfinite(result.value))
        self.assertTrue(np.all(np.isfinite(result.gradient)))


class TestWeightScaling(unittest.TestCase):
    def test_values_scale_with_weights(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            scores = rng.normal(0.0, 2.0, 7)
            labels = set(int(c) for c in rng.choice(7, size=int(rng.integers(1, 7)), replace=False))
            weights = rng.uniform(0.1, 10.0, 7)
            scale = float(rng.uniform(0.1, 5.0))
            for loss in (BCE, WARP, WLSEP):
                plain = LOSSES[loss](scores, labels, weights)
                scaled = LOSSES[loss](scores, labels, scale * weights)
                self.assertAlmostEqual(
                    scaled.value, scale * plain.value, delta=1e-12 * max(1.0, scaled.value)
                )
                np.testing.assert_allclose(
                    scaled.gradient, scale * plain.gradient, rtol=1e-12, atol=1e-15
                )


class TestBatch(unittest.TestCase):
    def test_rows_match_single_examples(self):
        rng = np.random.default_rng(8)
        scores = rng.normal(0.0, 2.0, (6, 5))
        positives = np.zeros((6, 5), dtype=bool)
        for row in range(6):
            positives[row, rng.choice(5, size=int(rng.integers(1, 5)), replace=False)] = True
        weights = rng.uniform(0.1, 10.0, 5)

        for loss in LOSS_NAMES:
            values, gradient = batch_loss(loss, scores, positives, weights)
            for row in range(6):
                single = LOSSES[loss](scores[row], set(np.flatnonzero(positives[row])), weights)
                self.assertAlmostEqual(values[row], single.value, places=12)
                np.testing.assert_allclose(gradient[row], single.gradient, atol=1e-12)

    def test_translation_invariance(self):
        rng = np.random.default_rng(9)
        scores = rng.normal(0.0, 2.0, 10)
        for loss in LOSS_NAMES:
            before = LOSSES[loss](scores, {0, 3}).value
            after = LOSSES[loss](scores + 3.0, {0, 3}).value
            if loss == BCE:
                self.assertNotAlmostEqual(before, after)
            else:
                self.assertAlmostEqual(before, after, places=9)

    def test_rows_without_negatives(self):
        scores = np.array([[0.3, -1.2, 2.0], [0.0, 2.0, 0.5]])
        positives = np.array([[True, True, True], [True, False, False]])
        for loss in (WARP, LSEP, WLSEP):
            values, gradient = batch_loss(loss, scores, positives, [1.0, 1.0, 1.0])
            self.assertEqual(values[0], 0.0, loss)
            np.testing.assert_array_equal(gradient[0], [0.0, 0.0, 0.0])
            single = LOSSES[loss](scores[1], {0}, [1.0, 1.0, 1.0])
            self.assertAlmostEqual(values[1], single.value, places=12)

    def test_unknown_loss(self):
        with self.assertRaises(ValueError):
            batch_loss("hinge", [[0.0, 1.0]], [[True, False]])

    def test_rejects_bad_input(self):
        with self.assertRaises(ValueError):
            batch_loss(WARP, [[0.0, float("inf")]], [[True, False]])
        with self.assertRaises(ValueError):
            batch_loss(BCE, [[0.0, 1.0]], [[False, False]])
        with self.assertRaises(ValueError):
            label_mask({3}, 3)


if __name__ == "__main__":
    unittest.main()

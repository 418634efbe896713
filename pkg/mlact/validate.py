import logging

import numpy as np

from mlact.core import Dataset, MultiLabelExample, build_vocabulary
from mlact.losses import BCE, LOSS_NAMES, LOSSES, LSEP, WARP, WLSEP, lsep_loss, wlsep_loss
from mlact.metrics import macro_map, micro_map
from mlact.trainer import gradient_check

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-5
IDENTITY_TOLERANCE = 1e-12
ORACLE_TOLERANCE = 1e-12
STABILITY_MAGNITUDE = 500.0

RANKING_LOSSES = (WARP, LSEP, WLSEP)


# ============================================================================
def oracle_average_precision(scores, positives):
    """Literal AP: ranks by descending score, ties by ascending index, and
    averages the precision at the rank of every positive
    """
    order = sorted(range(len(scores)), key=lambda k: (-scores[k], k))
    hits = 0
    precisions = []
    for position, item in enumerate(order, start=1):
        if item in positives:
            hits += 1
            precisions.append(hits / position)
    if not precisions:
        return None
    return sum(precisions) / len(precisions)


def oracle_micro_map(predictions, dataset):
    values = [
        oracle_average_precision(list(row), example.labels)
        for row, example in zip(predictions, dataset.examples)
    ]
    return sum(values) / len(values)


def oracle_macro_map(predictions, dataset):
    values = []
    for c in range(dataset.num_classes):
        positives = {n for n, example in enumerate(dataset.examples) if c in example.labels}
        ap = oracle_average_precision([row[c] for row in predictions], positives)
        if ap is not None:
            values.append(ap)
    return sum(values) / len(values)


# ============================================================================
class Verification(object):
    """Numerical self-checks of the losses and metrics on random instances"""

    def __init__(self, instances=100, seed=0):
        if instances < 1:
            raise ValueError("instances must be positive")
        self.instances = instances
        self.seed = seed

    def _rng(self, salt):
        return np.random.default_rng([self.seed, salt])

    def random_instance(self, rng, min_classes=3, max_classes=50, positives=None):
        num_classes = int(rng.integers(min_classes, max_classes + 1))
        count = positives or int(rng.integers(1, num_classes))
        labels = set(int(c) for c in rng.choice(num_classes, size=count, replace=False))
        scores = rng.normal(0.0, 2.0, num_classes)
        weights = rng.uniform(0.1, 10.0, num_classes)
        return scores, labels, weights

    def check_gradients(self):
        """Analytic loss gradients agree with central differences"""
        success = True
        for salt, loss in enumerate(LOSS_NAMES):
            rng = self._rng(salt)
            worst = 0.0
            for _ in range(self.instances):
                scores, labels, weights = self.random_instance(rng)
                result = gradient_check(loss, scores, labels, weights, epsilon=1e-5)
                worst = max(worst, result.max_error)

            logger.debug("%s: max relative gradient error %.3g", loss, worst)
            if worst >= GRADIENT_TOLERANCE:
                print("%s gradient check failed, max relative error %.3g" % (loss, worst))
                success = False

        if success:
            print("Gradient checks passed for %s" % ", ".join(LOSS_NAMES))
        return success

    def check_reduction_identity(self):
        """Weighted LSEP with uniform weights and one positive equals LSEP"""
        rng = self._rng(10)
        for _ in range(self.instances * 10):
            scores, labels, _ = self.random_instance(rng, positives=1)
            plain = lsep_loss(scores, labels)
            weighted = wlsep_loss(scores, labels, np.ones(scores.shape[0]))

            value_gap = abs(plain.value - weighted.value)
            gradient_gap = float(np.max(np.abs(plain.gradient - weighted.gradient)))
            if max(value_gap, gradient_gap) > IDENTITY_TOLERANCE:
                print(
                    "wlsep does not reduce to lsep: value gap %.3g, gradient gap %.3g"
                    % (value_gap, gradient_gap)
                )
                return False

        print("wlsep reduces to lsep for single positives")
        return True

    def check_translation_invariance(self):
        """Shifting all scores leaves the ranking losses unchanged"""
        rng = self._rng(20)
        for _ in range(self.instances):
            scores, labels, weights = self.random_instance(rng)
            shift = float(rng.uniform(-10.0, 10.0))
            for loss in RANKING_LOSSES:
                before = LOSSES[loss](scores, labels, weights).value
                after = LOSSES[loss](scores + shift, labels, weights).value
                if abs(before - after) > 1e-9 * max(1.0, abs(before)):
                    print("%s changes under a score shift of %.3f" % (loss, shift))
                    return False

        scores, labels, weights = self.random_instance(rng)
        if LOSSES[BCE](scores, labels, weights).value == LOSSES[BCE](scores + 1.0, labels, weights).value:
            print("bce is unexpectedly invariant to a score shift")
            return False

        print("Ranking losses are translation invariant")
        return True

    def random_dataset(self, rng):
        num_classes = int(rng.integers(2, 11))
        count = int(rng.integers(1, 51))
        vocabulary = build_vocabulary(["c%d" % c for c in range(num_classes)])
        examples = []
        for num in range(count):
            size = int(rng.integers(1, num_classes + 1))
            labels = rng.choice(num_classes, size=size, replace=False)
            examples.append(MultiLabelExample("e%d" % num, [0.0], labels))
        # coarse scores produce ties, exercising the tie-break order
        predictions = np.round(rng.normal(0.0, 1.0, (count, num_classes)), 1)
        return Dataset(vocabulary, examples), predictions

    def check_metric_oracle(self):
        """micro/macro mAP against a brute-force re-implementation"""
        rng = self._rng(30)
        for _ in range(max(1, self.instances * 2)):
            dataset, predictions = self.random_dataset(rng)
            rows = predictions.tolist()
            pairs = (
                ("micro", micro_map(predictions, dataset), oracle_micro_map(rows, dataset)),
                ("macro", macro_map(predictions, dataset), oracle_macro_map(rows, dataset)),
            )
            for name, value, expected in pairs:
                if abs(value - expected) > ORACLE_TOLERANCE:
                    print("%s mAP %r differs from oracle %r" % (name, value, expected))
                    return False

        print("mAP matches the brute-force oracle")
        return True

    def check_stability(self):
        """Finite values and gradients at large score magnitudes"""
        rng = self._rng(40)
        for _ in range(self.instances):
            scores, labels, weights = self.random_instance(rng)
            scores = np.sign(scores) * STABILITY_MAGNITUDE
            for loss in LOSS_NAMES:
                result = LOSSES[loss](scores, labels, weights)
                if not np.isfinite(result.value) or not np.all(np.isfinite(result.gradient)):
                    print("%s is not finite at magnitude %g" % (loss, STABILITY_MAGNITUDE))
                    return False

        print("Losses are finite at magnitude %g" % STABILITY_MAGNITUDE)
        return True

    def checks(self):
        return [
            self.check_gradients,
            self.check_reduction_identity,
            self.check_translation_invariance,
            self.check_metric_oracle,
            self.check_stability,
        ]

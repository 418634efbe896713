"""
Evaluation: top-k accuracy, average precision and micro/macro mAP.

Ties are always broken deterministically: by ascending class index when
ranking classes for one example, by example order when ranking examples
for one class.
"""
import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

REPORT_KEYS = ("top1", "top5", "micro_map", "macro_map", "per_class_ap")


def _descending(scores):
    # stable sort of the negated scores keeps equal scores in index order
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def _as_predictions(predictions, dataset):
    predictions = np.asarray(predictions, dtype=np.float64)
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    if predictions.shape != (len(dataset), dataset.num_classes):
        raise ValueError(
            "predictions shape %s does not match %d examples x %d classes"
            % (predictions.shape, len(dataset), dataset.num_classes)
        )
    return predictions


def top_k_accuracy(predictions, dataset, k):
    """Fraction of examples with a positive among the k best-scored classes"""
    if k < 1:
        raise ValueError("k must be at least 1, got %d" % k)
    predictions = _as_predictions(predictions, dataset)
    k = min(k, dataset.num_classes)

    hits = 0
    for row, example in zip(predictions, dataset.examples):
        if any(int(c) in example.labels for c in _descending(row)[:k]):
            hits += 1
    return hits / len(dataset)


def average_precision(scores, positives):
    """Mean over positives of the precision at their sorted position.

    Returns nan when there are no positives (undefined AP).
    """
    scores = np.asarray(scores, dtype=np.float64)
    is_positive = np.zeros(scores.shape[0], dtype=bool)
    is_positive[list(positives)] = True
    if not is_positive.any():
        return float("nan")

    ranked = is_positive[_descending(scores)]
    hits = np.cumsum(ranked)
    positions = np.arange(1, ranked.shape[0] + 1)
    return float(np.mean(hits[ranked] / positions[ranked]))


def example_average_precisions(predictions, dataset):
    predictions = _as_predictions(predictions, dataset)
    return np.array(
        [
            average_precision(row, example.labels)
            for row, example in zip(predictions, dataset.examples)
        ]
    )


def micro_map(predictions, dataset):
    """Mean of the per-example average precisions (classes ranked per example)"""
    return float(np.mean(example_average_precisions(predictions, dataset)))


def class_average_precisions(predictions, dataset):
    """Per-class AP ranking all examples by that class's score; nan for
    classes without positive examples
    """
    predictions = _as_predictions(predictions, dataset)
    labels = dataset.label_matrix()
    return np.array(
        [
            average_precision(predictions[:, c], np.flatnonzero(labels[:, c]))
            for c in range(dataset.num_classes)
        ]
    )


def macro_map(predictions, dataset):
    """Mean of per-class AP over the classes that have positives"""
    per_class = class_average_precisions(predictions, dataset)
    defined = per_class[~np.isnan(per_class)]
    if defined.size == 0:
        raise ValueError("no class has a positive example")
    return float(np.mean(defined))


# ============================================================================
@dataclass(frozen=True)
class MetricsReport:
    top1: float
    top5: float
    micro_map: float
    macro_map: float
    per_class_ap: tuple
    class_names: tuple = ()

    def to_dict(self):
        return {
            "top1": self.top1,
            "top5": self.top5,
            "micro_map": self.micro_map,
            "macro_map": self.macro_map,
            "per_class_ap": list(self.per_class_ap),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self):
        buff = io.StringIO()
        writer = csv.writer(buff, lineterminator="\n")
        writer.writerow(["metric", "class", "value"])
        for key in REPORT_KEYS[:4]:
            writer.writerow([key, "", repr(getattr(self, key))])

        names = self.class_names or tuple(str(i) for i in range(len(self.per_class_ap)))
        for name, ap in zip(names, self.per_class_ap):
            writer.writerow(["ap", name, "" if ap is None else repr(ap)])
        return buff.getvalue()


def evaluate_predictions(predictions, dataset):
    per_class = class_average_precisions(predictions, dataset)
    defined = per_class[~np.isnan(per_class)]
    if defined.size == 0:
        raise ValueError("no class has a positive example")

    return MetricsReport(
        top1=top_k_accuracy(predictions, dataset, 1),
        top5=top_k_accuracy(predictions, dataset, 5),
        micro_map=micro_map(predictions, dataset),
        macro_map=float(np.mean(defined)),
        per_class_ap=tuple(None if math.isnan(ap) else float(ap) for ap in per_class),
        class_names=tuple(dataset.vocabulary.names),
    )

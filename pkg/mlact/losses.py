"""
Multi-label losses on raw class scores: BCE, WARP, LSEP and weighted LSEP.

Every loss is evaluated in matrix form over a batch of score vectors (N×C)
and positive masks (N×C), with the full positive/negative pair set and no
sampling. The single-example functions are one-row views of the batch code.
Gradients are taken with respect to the raw scores.
"""
from dataclasses import dataclass

import numpy as np

from mlact.core import ClassWeights

BCE = "bce"
WARP = "warp"
LSEP = "lsep"
WLSEP = "wlsep"
LOSS_NAMES = (BCE, WARP, LSEP, WLSEP)


@dataclass(frozen=True, eq=False)
class LossResult:
    value: float
    gradient: np.ndarray


# ============================================================================
def as_scores(scores):
    """Validates a ScoreVector (1-D) or a batch of them (2-D)"""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim not in (1, 2) or scores.shape[-1] == 0:
        raise ValueError("scores must be a non-empty vector or matrix")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    return scores


def label_mask(labels, num_classes):
    """Boolean positive mask from a set of class indices"""
    mask = np.zeros(num_classes, dtype=bool)
    for label in labels:
        label = int(label)
        if not 0 <= label < num_classes:
            raise ValueError("label index %d out of range for %d classes" % (label, num_classes))
        mask[label] = True
    return mask


def weight_vector(weights, num_classes):
    if weights is None:
        return np.ones(num_classes)
    if isinstance(weights, ClassWeights):
        weights = weights.weights
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (num_classes,):
        raise ValueError(
            "expected %d class weights, got shape %s" % (num_classes, weights.shape)
        )
    return weights


def _check_batch(scores, positives):
    scores = as_scores(scores)
    if scores.ndim == 1:
        scores = scores[None, :]
    positives = np.asarray(positives, dtype=bool)
    if positives.ndim == 1:
        positives = positives[None, :]
    if positives.shape != scores.shape:
        raise ValueError(
            "label mask shape %s does not match scores %s" % (positives.shape, scores.shape)
        )
    if not np.all(positives.any(axis=1)):
        raise ValueError("every example needs at least one positive label")
    return scores, positives


def _pair_mask(positives):
    """mask[n, i, j] is True for positive i and negative j"""
    return positives[:, :, None] & ~positives[:, None, :]


def _pair_differences(scores):
    """diff[n, i, j] = x_j - x_i"""
    return scores[:, None, :] - scores[:, :, None]


def _reduce_pairs(coef):
    """Gradient of sum_ij coef[n,i,j] * (x_j - x_i) with respect to x"""
    return coef.sum(axis=1) - coef.sum(axis=2)


# ============================================================================
def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-_softplus(-x))


def bce_batch(scores, positives, weights=None):
    """Weighted binary cross entropy on raw scores, mean over classes"""
    scores, positives = _check_batch(scores, positives)
    num_classes = scores.shape[1]
    w = weight_vector(weights, num_classes)
    y = positives.astype(np.float64)

    # -log(sigmoid(x)) = softplus(-x), -log(1 - sigmoid(x)) = softplus(x)
    terms = w * (y * _softplus(-scores) + (1.0 - y) * _softplus(scores))
    values = terms.sum(axis=1) / num_classes
    gradient = w * (_sigmoid(scores) - y) / num_classes
    return values, gradient


def rank_of(scores, i):
    """1 + number of classes scoring strictly higher than class i"""
    scores = as_scores(scores)
    if scores.ndim != 1:
        raise ValueError("rank_of expects a single score vector")
    if not 0 <= i < scores.shape[0]:
        raise ValueError("class index %d out of range" % i)
    return 1 + int(np.count_nonzero(scores > scores[i]))


def rank_weight(r):
    """Harmonic number H_r = 1 + 1/2 + ... + 1/r"""
    if r < 1:
        raise ValueError("rank must be at least 1, got %d" % r)
    return float(np.sum(1.0 / np.arange(1, r + 1, dtype=np.float64)))


def _harmonic_table(num_classes):
    # table[r] = H_r, table[0] unused
    table = np.zeros(num_classes + 1)
    table[1:] = np.cumsum(1.0 / np.arange(1, num_classes + 1, dtype=np.float64))
    return table


def warp_batch(scores, positives, weights=None):
    """Rank-weighted pairwise hinge. The rank weight is a constant of the
    forward pass; the hinge subgradient at exactly zero margin is 0. Rows
    without a negative class have no pairs and contribute nothing.
    """
    scores, positives = _check_batch(scores, positives)

    num_classes = scores.shape[1]
    w = weight_vector(weights, num_classes)

    ranks = 1 + (scores[:, None, :] > scores[:, :, None]).sum(axis=2)
    rank_weights = _harmonic_table(num_classes)[ranks]

    pairs = _pair_mask(positives)
    margins = 1.0 + _pair_differences(scores)
    active = pairs & (margins > 0.0)
    hinges = np.where(active, margins, 0.0)

    coef = positives * w * rank_weights / positives.sum(axis=1, keepdims=True)
    values = (coef * hinges.sum(axis=2)).sum(axis=1)
    gradient = _reduce_pairs(coef[:, :, None] * active)
    return values, gradient


def lsep_batch(scores, positives, weights=None):
    """log(1 + sum over positive i, negative j of exp(x_j - x_i)).

    Evaluated as a shifted log-sum-exp over the pair list plus a virtual pair
    of exponent 0. Class weights are not part of this loss and are ignored.
    """
    scores, positives = _check_batch(scores, positives)
    pairs = _pair_mask(positives)
    diffs = np.where(pairs, _pair_differences(scores), -np.inf)

    shift = np.maximum(0.0, diffs.max(axis=(1, 2)))
    exps = np.exp(diffs - shift[:, None, None])
    total = np.exp(-shift) + exps.sum(axis=(1, 2))

    values = shift + np.log(total)
    gradient = _reduce_pairs(exps / total[:, None, None])
    return values, gradient


def wlsep_batch(scores, positives, weights=None):
    """(1/|Y|) sum over positive i of w_i log(1 + sum over negative j of
    exp(x_j - x_i)), each inner term a shifted log-sum-exp.
    """
    scores, positives = _check_batch(scores, positives)
    w = weight_vector(weights, scores.shape[1])
    pairs = _pair_mask(positives)
    diffs = np.where(pairs, _pair_differences(scores), -np.inf)

    shift = np.maximum(0.0, diffs.max(axis=2))
    exps = np.exp(diffs - shift[:, :, None])
    totals = np.exp(-shift) + exps.sum(axis=2)
    per_positive = shift + np.log(totals)

    coef = positives * w / positives.sum(axis=1, keepdims=True)
    values = (coef * per_positive).sum(axis=1)
    gradient = _reduce_pairs(coef[:, :, None] * (exps / totals[:, :, None]))
    return values, gradient


BATCH_LOSSES = {
    BCE: bce_batch,
    WARP: warp_batch,
    LSEP: lsep_batch,
    WLSEP: wlsep_batch,
}


def batch_loss(name, scores, positives, weights=None):
    """Per-example loss values (N) and score gradients (N×C) for a batch"""
    try:
        func = BATCH_LOSSES[name]
    except KeyError:
        raise ValueError(
            "unknown loss '%s', expected one of %s" % (name, ", ".join(LOSS_NAMES))
        )
    return func(scores, positives, weights)


# ============================================================================
def _single(func, scores, labels, weights):
    scores = as_scores(scores)
    if scores.ndim != 1:
        raise ValueError("expected a single score vector")
    positives = label_mask(labels, scores.shape[0])
    values, gradient = func(scores, positives, weights)
    return LossResult(float(values[0]), gradient[0])


def bce_loss(scores, labels, weights=None):
    return _single(bce_batch, scores, labels, weights)


def warp_loss(scores, labels, weights=None):
    scores = as_scores(scores)
    if scores.ndim == 1 and label_mask(labels, scores.shape[0]).all():
        raise ValueError("no negative classes")
    return _single(warp_batch, scores, labels, weights)


def lsep_loss(scores, labels):
    return _single(lsep_batch, scores, labels, None)


def wlsep_loss(scores, labels, weights=None):
    return _single(wlsep_batch, scores, labels, weights)


LOSSES = {
    BCE: bce_loss,
    WARP: warp_loss,
    LSEP: lambda scores, labels, weights=None: lsep_loss(scores, labels),
    WLSEP: wlsep_loss,
}


def warp_kinks(scores, labels, epsilon):
    """Coordinates where a perturbation of +-epsilon can cross a hinge kink
    (1 + x_j - x_i = 0) or change the rank of a positive class.
    """
    scores = as_scores(scores)
    positives = label_mask(labels, scores.shape[0])
    diffs = _pair_differences(scores[None, :])[0]
    # diffs[i, j] = x_j - x_i
    hinge = positives[:, None] & ~positives[None, :] & (np.abs(1.0 + diffs) <= epsilon)
    ties = positives[:, None] & (np.abs(diffs) <= epsilon)
    np.fill_diagonal(ties, False)
    near = hinge | ties
    return near.any(axis=0) | near.any(axis=1)

"""
Deterministic training of a linear (optionally one-hidden-layer) classifier
with any of the multi-label losses, gradient verification and evaluation.
"""
import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from mlact.core import (
    INVERSE_FREQUENCY,
    UNIFORM,
    WEIGHT_SCHEMES,
    SyntheticConfig,
    compute_class_weights,
    generate_synthetic_dataset,
)
from mlact.formats import read_tensors, write_tensors
from mlact.losses import (
    LOSS_NAMES,
    LOSSES,
    LSEP,
    WARP,
    WLSEP,
    batch_loss,
    label_mask,
    warp_kinks,
)
from mlact.metrics import evaluate_predictions

logger = logging.getLogger(__name__)


class TrainingDivergedError(ArithmeticError):
    def __init__(self, epoch, batch, value):
        super().__init__(
            "non-finite loss %r at epoch %d, batch %d" % (value, epoch, batch)
        )
        self.epoch = epoch
        self.batch = batch


# ============================================================================
@dataclass(frozen=True, eq=False)
class ModelParameters:
    """Linear head `weight` (K×C) and `bias` (C). With a hidden layer K is the
    hidden width H and features pass through logistic(f @ hidden_weight +
    hidden_bias) first.
    """

    weight: np.ndarray
    bias: np.ndarray
    hidden_weight: np.ndarray = None
    hidden_bias: np.ndarray = None

    def __post_init__(self):
        weight = np.array(self.weight, dtype=np.float64)
        bias = np.array(self.bias, dtype=np.float64)
        if weight.ndim != 2 or bias.shape != (weight.shape[1],):
            raise ValueError(
                "head weight %s and bias %s do not align" % (weight.shape, bias.shape)
            )

        arrays = [weight, bias]
        if (self.hidden_weight is None) != (self.hidden_bias is None):
            raise ValueError("hidden weight and bias must be given together")
        if self.hidden_weight is not None:
            hidden_weight = np.array(self.hidden_weight, dtype=np.float64)
            hidden_bias = np.array(self.hidden_bias, dtype=np.float64)
            if hidden_weight.ndim != 2 or hidden_bias.shape != (hidden_weight.shape[1],):
                raise ValueError("hidden weight and bias do not align")
            if hidden_weight.shape[1] != weight.shape[0]:
                raise ValueError(
                    "hidden width %d does not match head input %d"
                    % (hidden_weight.shape[1], weight.shape[0])
                )
            object.__setattr__(self, "hidden_weight", hidden_weight)
            object.__setattr__(self, "hidden_bias", hidden_bias)
            arrays += [hidden_weight, hidden_bias]

        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ValueError("model parameters must be finite")

        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def has_hidden(self):
        return self.hidden_weight is not None

    @property
    def num_features(self):
        if self.has_hidden:
            return self.hidden_weight.shape[0]
        return self.weight.shape[0]

    @property
    def num_classes(self):
        return self.weight.shape[1]

    def arrays(self):
        if self.has_hidden:
            return [self.weight, self.bias, self.hidden_weight, self.hidden_bias]
        return [self.weight, self.bias]

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_flat(self, vector):
        """New parameters of the same layout filled from a flat vector"""
        parts = []
        offset = 0
        for array in self.arrays():
            parts.append(np.reshape(vector[offset : offset + array.size], array.shape))
            offset += array.size
        return ModelParameters(*parts)

    def __eq__(self, other):
        if not isinstance(other, ModelParameters):
            return NotImplemented
        mine, theirs = self.arrays(), other.arrays()
        return len(mine) == len(theirs) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(mine, theirs)
        )

    __hash__ = None


def initialize_model(num_features, num_classes, hidden_units=0, init_scale=0.01, seed=0):
    """Small Gaussian weights, zero biases"""
    rng = np.random.default_rng(seed)
    if hidden_units:
        hidden_weight = rng.normal(0.0, 1.0 / np.sqrt(num_features), (num_features, hidden_units))
        weight = rng.normal(0.0, init_scale, (hidden_units, num_classes))
        return ModelParameters(
            weight, np.zeros(num_classes), hidden_weight, np.zeros(hidden_units)
        )

    weight = rng.normal(0.0, init_scale, (num_features, num_classes))
    return ModelParameters(weight, np.zeros(num_classes))


def save_model(model, path):
    """TensorFile with the head as (K+1)×C (bias in the last row), followed
    by (F+1)×H for the hidden layer when present
    """
    tensors = [np.vstack([model.weight, model.bias])]
    if model.has_hidden:
        tensors.append(np.vstack([model.hidden_weight, model.hidden_bias]))
    write_tensors(path, tensors)


def load_model(path):
    tensors = read_tensors(path)
    if len(tensors) not in (1, 2) or any(t.ndim != 2 or t.shape[0] < 2 for t in tensors):
        raise ValueError("%s is not a model file" % path)

    head = tensors[0]
    if len(tensors) == 1:
        return ModelParameters(head[:-1], head[-1])

    hidden = tensors[1]
    return ModelParameters(head[:-1], head[-1], hidden[:-1], hidden[-1])


# ============================================================================
def _logistic(x):
    return np.exp(-np.logaddexp(0.0, -x))


def _hidden_activations(model, features):
    return _logistic(features @ model.hidden_weight + model.hidden_bias)


def forward(model, features):
    """Raw class scores for one feature vector (F) or a batch (N×F)"""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim not in (1, 2) or features.shape[-1] != model.num_features:
        raise ValueError(
            "features of shape %s do not match model input size %d"
            % (features.shape, model.num_features)
        )

    inputs = _hidden_activations(model, features) if model.has_hidden else features
    return inputs @ model.weight + model.bias


def loss_and_gradients(model, features, positives, loss, weights=None):
    """Per-example loss values and the gradient of their batch mean for every
    parameter array (same order as ModelParameters.arrays)
    """
    features = np.asarray(features, dtype=np.float64)
    if model.has_hidden:
        hidden = _hidden_activations(model, features)
        inputs = hidden
    else:
        inputs = features
    scores = inputs @ model.weight + model.bias
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite class scores")

    values, score_grad = batch_loss(loss, scores, positives, weights)
    count = features.shape[0]
    score_grad = score_grad / count

    grads = [inputs.T @ score_grad, score_grad.sum(axis=0)]
    if model.has_hidden:
        pre_grad = (score_grad @ model.weight.T) * hidden * (1.0 - hidden)
        grads += [features.T @ pre_grad, pre_grad.sum(axis=0)]

    return values, grads


# ============================================================================
@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    loss: str = WLSEP
    weight_scheme: str = UNIFORM
    hidden_units: int = 0
    init_scale: float = 0.01

    def __post_init__(self):
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise ValueError("learning_rate must be a non-negative number")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.loss not in LOSS_NAMES:
            raise ValueError(
                "unknown loss '%s', expected one of %s" % (self.loss, ", ".join(LOSS_NAMES))
            )
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise ValueError(
                "unknown weight scheme '%s', expected one of %s"
                % (self.weight_scheme, ", ".join(WEIGHT_SCHEMES))
            )
        if self.hidden_units < 0:
            raise ValueError("hidden_units must be non-negative")
        if self.init_scale < 0:
            raise ValueError("init_scale must be non-negative")


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)
    mean_losses: list = field(default_factory=list)

    def record(self, epoch, mean_loss):
        self.epochs.append(epoch)
        self.mean_losses.append(mean_loss)

    def to_csv(self):
        buff = io.StringIO()
        writer = csv.writer(buff, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for epoch, value in zip(self.epochs, self.mean_losses):
            writer.writerow([epoch, repr(value)])
        return buff.getvalue()


def train(dataset, config, model=None):
    """Mini-batch SGD with momentum.

    The epoch loss is the mean per-example loss measured on each batch before
    its update. Shuffling comes from a generator seeded with config.seed, so
    the result depends only on (dataset, config, model).
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")

    if model is None:
        model = initialize_model(
            dataset.num_features,
            dataset.num_classes,
            hidden_units=config.hidden_units,
            init_scale=config.init_scale,
            seed=config.seed,
        )
    elif model.num_features != dataset.num_features or model.num_classes != dataset.num_classes:
        raise ValueError("model dimensions do not match the dataset")

    weights = compute_class_weights(dataset, config.weight_scheme)
    features = dataset.feature_matrix()
    positives = dataset.label_matrix()

    params = [a.copy() for a in model.arrays()]
    velocity = [np.zeros_like(a) for a in params]
    rng = np.random.default_rng([config.seed, 1])
    log = TrainingLog()

    count = len(dataset)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(count)
        total = 0.0
        for batch, start in enumerate(range(0, count, config.batch_size), start=1):
            idx = order[start : start + config.batch_size]
            current = ModelParameters(*params)
            try:
                values, grads = loss_and_gradients(
                    current, features[idx], positives[idx], config.loss, weights
                )
            except FloatingPointError:
                raise TrainingDivergedError(epoch, batch, float("nan"))

            batch_total = float(values.sum())
            if not np.isfinite(batch_total) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDivergedError(epoch, batch, batch_total)
            total += batch_total

            for param, vel, grad in zip(params, velocity, grads):
                vel *= config.momentum
                vel -= config.learning_rate * grad
                param += vel

            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingDivergedError(epoch, batch, float("nan"))

        mean_loss = total / count
        log.record(epoch, mean_loss)
        logger.info("epoch %d: mean %s loss %.6f", epoch, config.loss, mean_loss)

    return ModelParameters(*params), log


def evaluate(model, dataset):
    """Forward every example and compute the metrics report"""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    return evaluate_predictions(forward(model, dataset.feature_matrix()), dataset)


# ============================================================================
@dataclass(frozen=True)
class GradientCheck:
    max_error: float
    kinks: tuple = ()


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(
        1.0, np.maximum(np.abs(analytic), np.abs(numeric))
    )


def gradient_check(loss, scores, labels, weights=None, epsilon=1e-5):
    """Compares the analytic score gradient of a loss with central finite
    differences; returns the largest relative error over coordinates that
    are not at a WARP kink
    """
    if not 0 < epsilon <= 1e-3:
        raise ValueError("epsilon must lie in (0, 1e-3]")
    try:
        func = LOSSES[loss]
    except KeyError:
        raise ValueError("unknown loss '%s'" % loss)

    scores = np.array(scores, dtype=np.float64)
    analytic = func(scores, labels, weights).gradient

    numeric = np.zeros_like(scores)
    for k in range(scores.shape[0]):
        plus, minus = scores.copy(), scores.copy()
        plus[k] += epsilon
        minus[k] -= epsilon
        numeric[k] = (func(plus, labels, weights).value - func(minus, labels, weights).value) / (
            2.0 * epsilon
        )

    if loss == WARP:
        kinks = warp_kinks(scores, labels, epsilon)
    else:
        kinks = np.zeros(scores.shape[0], dtype=bool)

    errors = relative_error(analytic, numeric)[~kinks]
    max_error = float(errors.max()) if errors.size else 0.0
    return GradientCheck(max_error, tuple(int(k) for k in np.flatnonzero(kinks)))


def parameter_gradient_check(model, features, labels, loss, weights=None, epsilon=1e-6):
    """Backpropagated parameter gradients against finite differences of the
    mean batch loss; returns the largest relative error
    """
    positives = np.array(
        [label_mask(example_labels, model.num_classes) for example_labels in labels]
    )
    _, grads = loss_and_gradients(model, features, positives, loss, weights)
    analytic = np.concatenate([g.ravel() for g in grads])

    def total(vector):
        values, _ = loss_and_gradients(model.from_flat(vector), features, positives, loss, weights)
        return float(values.mean())

    theta = model.flat()
    numeric = np.zeros_like(theta)
    for k in range(theta.shape[0]):
        plus, minus = theta.copy(), theta.copy()
        plus[k] += epsilon
        minus[k] -= epsilon
        numeric[k] = (total(plus) - total(minus)) / (2.0 * epsilon)

    return float(relative_error(analytic, numeric).max())


# ============================================================================
@dataclass(frozen=True)
class ComparisonConfig:
    """Loss-comparison experiment on long-tail synthetic data"""

    classes: int = 20
    features: int = 32
    train_examples: int = 1000
    eval_examples: int = 300
    zipf_exponent: float = 1.2
    co_label_prob: float = 0.3
    noise_std: float = 0.5
    seeds: int = 10
    runs: tuple = ((LSEP, UNIFORM), (WLSEP, INVERSE_FREQUENCY))
    learning_rate: float = 0.05
    # full batch, so 100 gradient steps in total
    momentum: float = 0.0
    epochs: int = 100
    batch_size: int = 1000

    def __post_init__(self):
        if self.seeds < 1:
            raise ValueError("seeds must be positive")
        if self.train_examples < self.classes or self.eval_examples < 1:
            raise ValueError("train_examples must cover every class and eval_examples be positive")
        runs = tuple(tuple(run) for run in self.runs)
        for loss, scheme in runs:
            if loss not in LOSS_NAMES or scheme not in WEIGHT_SCHEMES:
                raise ValueError("invalid run (%s, %s)" % (loss, scheme))
        object.__setattr__(self, "runs", runs)


@dataclass(frozen=True)
class ComparisonRow:
    seed: int
    loss: str
    weight_scheme: str
    top1: float
    top5: float
    micro_map: float
    macro_map: float


def comparison_splits(config, seed):
    synthetic = SyntheticConfig(
        classes=config.classes,
        features=config.features,
        examples=config.train_examples + config.eval_examples,
        zipf_exponent=config.zipf_exponent,
        co_label_prob=config.co_label_prob,
        noise_std=config.noise_std,
    )
    return generate_synthetic_dataset(synthetic, seed).split(config.train_examples)


def compare_losses(config):
    """Trains every configured (loss, weight scheme) per seed with the same
    budget and evaluates on a held-out split of the same synthetic draw
    """
    rows = []
    for seed in range(config.seeds):
        train_set, eval_set = comparison_splits(config, seed)
        for loss, scheme in config.runs:
            optimizer = OptimizerConfig(
                learning_rate=config.learning_rate,
                momentum=config.momentum,
                epochs=config.epochs,
                batch_size=config.batch_size,
                seed=seed,
                loss=loss,
                weight_scheme=scheme,
            )
            model, _ = train(train_set, optimizer)
            report = evaluate(model, eval_set)
            logger.info(
                "seed %d %s/%s: micro %.4f macro %.4f",
                seed,
                loss,
                scheme,
                report.micro_map,
                report.macro_map,
            )
            rows.append(
                ComparisonRow(
                    seed,
                    loss,
                    scheme,
                    report.top1,
                    report.top5,
                    report.micro_map,
                    report.macro_map,
                )
            )
    return rows


def count_macro_wins(rows, challenger, baseline):
    """Number of seeds where the challenger (loss, scheme) run has a higher
    macro mAP than the baseline run
    """
    by_seed = {}
    for row in rows:
        by_seed.setdefault(row.seed, {})[(row.loss, row.weight_scheme)] = row.macro_map

    wins = 0
    for results in by_seed.values():
        if challenger in results and baseline in results:
            wins += results[challenger] > results[baseline]
    return wins


def comparison_csv(rows):
    buff = io.StringIO()
    writer = csv.writer(buff, lineterminator="\n")
    writer.writerow(["seed", "loss", "weights", "top1", "top5", "micro_map", "macro_map"])
    for row in rows:
        writer.writerow(
            [
                row.seed,
                row.loss,
                row.weight_scheme,
                repr(row.top1),
                repr(row.top5),
                repr(row.micro_map),
                repr(row.macro_map),
            ]
        )
    return buff.getvalue()


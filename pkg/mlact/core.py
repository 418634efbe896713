"""
Dataset model: class vocabulary, multi-label examples, class weights,
synthetic long-tail generation and the JSON-lines manifest.
"""
import logging
import os
from dataclasses import dataclass, field

import jsonlines
import numpy as np
import shortuuid

from mlact.formats import read_tensor

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
INVERSE_FREQUENCY = "inverse_frequency"
WEIGHT_SCHEMES = (UNIFORM, INVERSE_FREQUENCY)

MIN_CLASS_WEIGHT = 0.1
MAX_CLASS_WEIGHT = 10.0


def _frozen_array(values, dtype=np.float64):
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


# ============================================================================
@dataclass(frozen=True)
class LabelVocabulary:
    names: tuple

    def __post_init__(self):
        names = tuple(self.names)
        if len(names) < 2:
            raise ValueError("a vocabulary needs at least 2 classes, got %d" % len(names))

        seen = set()
        for name in names:
            if not isinstance(name, str):
                raise ValueError("class names must be strings, got %r" % (name,))
            if name in seen:
                raise ValueError("duplicate class name '%s'" % name)
            seen.add(name)

        object.__setattr__(self, "names", names)
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(names)})

    @property
    def size(self):
        return len(self.names)

    def __len__(self):
        return len(self.names)

    def index(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise ValueError("unknown class name '%s'" % name)


def build_vocabulary(names):
    """Assigns class indices 0..C-1 in the given order"""
    return LabelVocabulary(tuple(names))


# ============================================================================
@dataclass(frozen=True, eq=False)
class MultiLabelExample:
    id: str
    features: np.ndarray
    labels: frozenset

    def __post_init__(self):
        try:
            features = _frozen_array(self.features)
        except OverflowError:
            raise ValueError("example %s: feature value out of range" % self.id)
        if features.ndim != 1:
            raise ValueError("example %s: features must be a vector" % self.id)
        if not np.all(np.isfinite(features)):
            raise ValueError("example %s: features must be finite" % self.id)

        labels = frozenset(int(label) for label in self.labels)
        if not labels:
            raise ValueError("example %s: at least one positive label required" % self.id)
        if min(labels) < 0:
            raise ValueError("example %s: negative label index" % self.id)

        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __eq__(self, other):
        if not isinstance(other, MultiLabelExample):
            return NotImplemented
        return (
            self.id == other.id
            and self.labels == other.labels
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Dataset:
    vocabulary: LabelVocabulary
    examples: tuple
    class_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        examples = tuple(self.examples)
        num_classes = self.vocabulary.size

        num_features = None
        counts = np.zeros(num_classes, dtype=np.int64)
        for example in examples:
            if max(example.labels) >= num_classes:
                raise ValueError(
                    "example %s: label index %d out of range for %d classes"
                    % (example.id, max(example.labels), num_classes)
                )
            if num_features is None:
                num_features = example.features.shape[0]
            elif example.features.shape[0] != num_features:
                raise ValueError(
                    "example %s: expected %d features, got %d"
                    % (example.id, num_features, example.features.shape[0])
                )
            for label in example.labels:
                counts[label] += 1

        counts.setflags(write=False)
        object.__setattr__(self, "examples", examples)
        object.__setattr__(self, "class_counts", counts)

    def __len__(self):
        return len(self.examples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.vocabulary == other.vocabulary and self.examples == other.examples

    __hash__ = None

    @property
    def num_classes(self):
        return self.vocabulary.size

    @property
    def num_features(self):
        if not self.examples:
            return 0
        return self.examples[0].features.shape[0]

    def feature_matrix(self):
        """N×F dense view of the features"""
        if not self.examples:
            return np.zeros((0, 0))
        return np.stack([example.features for example in self.examples])

    def label_matrix(self):
        """N×C boolean view of the positive sets"""
        dense = np.zeros((len(self.examples), self.num_classes), dtype=bool)
        for row, example in enumerate(self.examples):
            dense[row, sorted(example.labels)] = True
        return dense

    def label_sets(self):
        return [example.labels for example in self.examples]

    def split(self, count):
        """Splits into the first `count` examples and the rest"""
        if not 0 <= count <= len(self.examples):
            raise ValueError("split point %d outside 0..%d" % (count, len(self.examples)))
        return (
            Dataset(self.vocabulary, self.examples[:count]),
            Dataset(self.vocabulary, self.examples[count:]),
        )


# ============================================================================
@dataclass(frozen=True, eq=False)
class ClassWeights:
    weights: np.ndarray

    def __post_init__(self):
        weights = _frozen_array(self.weights)
        if weights.ndim != 1 or weights.size == 0:
            raise ValueError("class weights must be a non-empty vector")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ValueError("class weights must be finite and positive")
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.weights.shape[0]

    @classmethod
    def uniform(cls, num_classes):
        return cls(np.ones(num_classes))


def compute_class_weights(dataset, scheme=UNIFORM):
    """Per-class balancing weights w_i.

    uniform gives all ones; inverse_frequency gives N_lab / (C * n_i) clamped
    to [0.1, 10.0], where N_lab is the total number of positive labels.
    """
    num_classes = dataset.num_classes
    if scheme == UNIFORM:
        return ClassWeights.uniform(num_classes)

    if scheme != INVERSE_FREQUENCY:
        raise ValueError(
            "unknown weight scheme '%s', expected one of %s" % (scheme, ", ".join(WEIGHT_SCHEMES))
        )

    counts = dataset.class_counts
    empty = [dataset.vocabulary.names[i] for i in np.flatnonzero(counts == 0)]
    if empty:
        raise ValueError("classes without positive examples: %s" % ", ".join(empty))

    total = counts.sum()
    weights = total / (num_classes * counts.astype(np.float64))
    return ClassWeights(np.clip(weights, MIN_CLASS_WEIGHT, MAX_CLASS_WEIGHT))


# ============================================================================
@dataclass(frozen=True)
class SyntheticConfig:
    classes: int = 20
    features: int = 32
    examples: int = 1000
    zipf_exponent: float = 1.2
    co_label_prob: float = 0.0
    noise_std: float = 0.5

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("classes must be at least 2, got %d" % self.classes)
        if self.features < self.classes:
            raise ValueError(
                "features (%d) must be at least classes (%d)" % (self.features, self.classes)
            )
        if self.examples < self.classes:
            raise ValueError(
                "examples (%d) must be at least classes (%d)" % (self.examples, self.classes)
            )
        if self.zipf_exponent < 0:
            raise ValueError("zipf_exponent must be non-negative")
        if not 0.0 <= self.co_label_prob < 1.0:
            raise ValueError("co_label_prob must lie in [0, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def zipf_proportions(num_classes, exponent):
    ranks = np.arange(1, num_classes + 1, dtype=np.float64)
    mass = ranks ** -exponent
    return mass / mass.sum()


def allocate_counts(total, proportions):
    """Largest-remainder rounding of total * proportions with every class
    receiving at least one item; ties go to the lower index
    """
    num_classes = len(proportions)
    counts = np.ones(num_classes, dtype=np.int64)
    spare = total - num_classes
    quotas = spare * np.asarray(proportions)
    floors = np.floor(quotas).astype(np.int64)
    counts += floors
    remainder = spare - floors.sum()
    order = np.lexsort((np.arange(num_classes), -(quotas - floors)))
    counts[order[:remainder]] += 1
    return counts


def class_directions(num_features, num_classes, rng):
    """Orthonormal F×C matrix of ground-truth class directions"""
    gaussian = rng.standard_normal((num_features, num_classes))
    q, r = np.linalg.qr(gaussian)
    # fix the sign so the factorization is unique
    return q * np.sign(np.diag(r))


def generate_synthetic_dataset(config, seed):
    """Long-tail multi-label data whose features are sums of class directions.

    Primary labels follow a Zipf law (exact, deterministic allocation), extra
    labels are added while a Bernoulli(co_label_prob) trial succeeds, each
    drawn from the Zipf law over the classes not yet present.
    """
    rng = np.random.default_rng(seed)
    num_classes = config.classes
    directions = class_directions(config.features, num_classes, rng)
    proportions = zipf_proportions(num_classes, config.zipf_exponent)

    primary = np.repeat(
        np.arange(num_classes), allocate_counts(config.examples, proportions)
    )
    primary = rng.permutation(primary)

    examples = []
    for num, label in enumerate(primary):
        labels = [int(label)]
        while len(labels) < num_classes and rng.random() < config.co_label_prob:
            available = np.ones(num_classes, dtype=bool)
            available[labels] = False
            p = np.where(available, proportions, 0.0)
            labels.append(int(rng.choice(num_classes, p=p / p.sum())))

        noise = rng.normal(0.0, config.noise_std, size=config.features)
        features = directions[:, labels].sum(axis=1) + noise
        example_id = shortuuid.uuid(name="mlact-synthetic-%d-%d" % (seed, num))
        examples.append(MultiLabelExample(example_id, features, frozenset(labels)))

    names = ["class_%03d" % i for i in range(num_classes)]
    dataset = Dataset(build_vocabulary(names), examples)
    logger.debug("Synthetic class counts: %s", dataset.class_counts.tolist())
    return dataset


# ============================================================================
def save_dataset(dataset, path):
    """Writes the JSON-lines manifest: a {"classes": [...]} header line, then
    one {"id", "features", "labels"} object per example
    """
    with jsonlines.open(path, mode="w", compact=True, sort_keys=True) as writer:
        writer.write({"classes": list(dataset.vocabulary.names)})
        for example in dataset.examples:
            writer.write(
                {
                    "id": example.id,
                    "features": example.features.tolist(),
                    "labels": sorted(example.labels),
                }
            )


def _load_features_file(base_dir, entry, lineno, cache):
    path = os.path.join(base_dir, entry["features_file"])
    row = entry.get("row")
    if not isinstance(row, int) or isinstance(row, bool):
        raise ValueError("line %d: features_file requires an integer 'row'" % lineno)

    if path not in cache:
        tensor = read_tensor(path)
        if tensor.ndim != 2:
            raise ValueError("line %d: features file %s must be 2-D" % (lineno, path))
        cache[path] = tensor

    tensor = cache[path]
    if not 0 <= row < tensor.shape[0]:
        raise ValueError(
            "line %d: row %d outside features file with %d rows" % (lineno, row, tensor.shape[0])
        )
    return tensor[row]


def _parse_example(entry, lineno, num_classes, base_dir, cache):
    if "id" not in entry or "labels" not in entry:
        raise ValueError("line %d: example needs 'id' and 'labels'" % lineno)

    if "features" in entry:
        features = entry["features"]
        if not isinstance(features, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in features
        ):
            raise ValueError("line %d: 'features' must be a list of numbers" % lineno)
    elif "features_file" in entry:
        features = _load_features_file(base_dir, entry, lineno, cache)
    else:
        raise ValueError("line %d: example needs 'features' or 'features_file'" % lineno)

    labels = entry["labels"]
    if not isinstance(labels, list) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in labels
    ):
        raise ValueError("line %d: 'labels' must be a list of integers" % lineno)
    if not labels:
        raise ValueError("line %d: example has no positive labels" % lineno)
    for label in labels:
        if not 0 <= label < num_classes:
            raise ValueError(
                "line %d: label index %d out of range for %d classes"
                % (lineno, label, num_classes)
            )

    try:
        return MultiLabelExample(str(entry["id"]), features, frozenset(labels))
    except ValueError as e:
        raise ValueError("line %d: %s" % (lineno, e))


def load_dataset(manifest_path):
    """Reads a JSON-lines manifest written by save_dataset (or by hand)"""
    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    cache = {}
    vocabulary = None
    examples = []

    with jsonlines.open(manifest_path) as reader:
        try:
            for lineno, entry in enumerate(reader.iter(type=dict), start=1):
                if vocabulary is None:
                    if "classes" not in entry:
                        raise ValueError("line %d: expected a {\"classes\": [...]} header" % lineno)
                    if not isinstance(entry["classes"], list):
                        raise ValueError("line %d: 'classes' must be a list of names" % lineno)
                    try:
                        vocabulary = build_vocabulary(entry["classes"])
                    except ValueError as e:
                        raise ValueError("line %d: %s" % (lineno, e))
                    continue

                examples.append(
                    _parse_example(entry, lineno, vocabulary.size, base_dir, cache)
                )
        except jsonlines.InvalidLineError as e:
            raise ValueError("line %d: malformed manifest line: %s" % (e.lineno, e))

    if vocabulary is None:
        raise ValueError("empty manifest: %s" % manifest_path)

    try:
        return Dataset(vocabulary, examples)
    except ValueError as e:
        raise ValueError("%s: %s" % (manifest_path, e))

"""
Unit interpretation by concept segmentation overlap.

Each unit's activations are thresholded at a dataset-wide top quantile,
upsampled to mask resolution and compared with every concept's masks by
pooled IoU; a unit is labeled with its best concept when the IoU clears a
cutoff.
"""
import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

CATEGORIES = ("object", "scene", "part", "material", "texture", "color", "action")

DEFAULT_QUANTILE = 0.005
DEFAULT_IOU_THRESHOLD = 0.04


@dataclass(frozen=True)
class Concept:
    concept_id: int
    name: str
    category: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(
                "concept %d: unknown category '%s'" % (self.concept_id, self.category)
            )


@dataclass(frozen=True, eq=False)
class ConceptMask:
    image_id: str
    concept_id: int
    mask: np.ndarray
    category: str = None

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("concept masks must be 2-D")
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True, eq=False)
class UnitActivations:
    """Activation grids of one unit for every image (images×h×w)"""

    unit_id: int
    grids: np.ndarray

    def __post_init__(self):
        grids = np.array(self.grids, dtype=np.float64)
        if grids.ndim != 3:
            raise ValueError("unit %d: activations must be images×h×w" % self.unit_id)
        object.__setattr__(self, "grids", grids)


@dataclass(frozen=True)
class UnitInterpretation:
    unit_id: int
    concept_id: int
    concept: str
    category: str
    iou: float
    interpretable: bool


@dataclass(frozen=True)
class InterpretationReport:
    units: tuple
    category_counts: dict
    interpretable_units: int
    iou_threshold: float

    @property
    def concept_count(self):
        return sum(self.category_counts.values())

    def to_dict(self):
        return {
            "iou_threshold": self.iou_threshold,
            "interpretable_units": self.interpretable_units,
            "concepts": self.concept_count,
            "category_counts": dict(self.category_counts),
            "units": [
                {
                    "unit": u.unit_id,
                    "concept_id": u.concept_id,
                    "concept": u.concept,
                    "category": u.category,
                    "iou": u.iou,
                    "interpretable": u.interpretable,
                }
                for u in self.units
            ],
        }

    def csv_rows(self):
        for u in self.units:
            yield [u.unit_id, u.concept_id, u.concept, u.category, repr(u.iou), int(u.interpretable)]


CSV_HEADER = ["unit", "concept_id", "concept", "category", "iou", "interpretable"]


# ============================================================================
def unit_threshold(activations, quantile=DEFAULT_QUANTILE):
    """Order statistic t such that the top `quantile` fraction of the unit's
    pooled activation values lie above it
    """
    if not 0.0 < quantile <= 0.5:
        raise ValueError("quantile must lie in (0, 0.5], got %r" % quantile)

    grids = activations.grids if isinstance(activations, UnitActivations) else activations
    values = np.asarray(grids, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("no activation values")

    above = int(math.floor(quantile * values.size + 1e-9))
    above = min(above, values.size - 1)
    return float(np.sort(values)[::-1][above])


def _interpolation_matrix(src, dst):
    """dst×src bilinear weights, half-pixel centers, clamped at the edges"""
    coords = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    coords = np.clip(coords, 0.0, src - 1)
    lower = np.floor(coords).astype(np.int64)
    upper = np.minimum(lower + 1, src - 1)
    frac = coords - lower

    matrix = np.zeros((dst, src))
    rows = np.arange(dst)
    np.add.at(matrix, (rows, lower), 1.0 - frac)
    np.add.at(matrix, (rows, upper), frac)
    return matrix


def upsample(grid, target):
    grid = np.asarray(grid, dtype=np.float64)
    height, width = target
    if grid.ndim != 2 or height < grid.shape[0] or width < grid.shape[1]:
        raise ValueError(
            "cannot upsample grid %s to %dx%d" % (grid.shape, height, width)
        )
    if grid.shape == (height, width):
        return grid
    rows = _interpolation_matrix(grid.shape[0], height)
    cols = _interpolation_matrix(grid.shape[1], width)
    return rows @ grid @ cols.T


def binarize_and_upsample(grid, threshold, target):
    """Bilinear upsampling to the target size, then strict > threshold"""
    return upsample(grid, target) > threshold


def unit_concept_iou(unit_masks, concept_masks):
    """Pooled IoU: total intersection over total union across images"""
    unit_masks = list(unit_masks)
    concept_masks = list(concept_masks)
    if len(unit_masks) != len(concept_masks):
        raise ValueError(
            "unit has %d masks but concept has %d" % (len(unit_masks), len(concept_masks))
        )

    intersection = 0
    union = 0
    for unit_mask, concept_mask in zip(unit_masks, concept_masks):
        unit_mask = np.asarray(unit_mask, dtype=bool)
        concept_mask = np.asarray(concept_mask, dtype=bool)
        if unit_mask.shape != concept_mask.shape:
            raise ValueError(
                "mask shapes differ: %s vs %s" % (unit_mask.shape, concept_mask.shape)
            )
        intersection += int(np.count_nonzero(unit_mask & concept_mask))
        union += int(np.count_nonzero(unit_mask | concept_mask))

    if union == 0:
        return 0.0
    return intersection / union


def assign_concepts(iou_table, concepts, unit_ids=None, iou_threshold=DEFAULT_IOU_THRESHOLD):
    """Labels each unit with its best concept (ties: lowest concept id)"""
    iou_table = np.asarray(iou_table, dtype=np.float64)
    concepts = list(concepts)
    if iou_table.ndim != 2 or iou_table.shape[1] != len(concepts) or not concepts:
        raise ValueError(
            "IoU table %s does not match %d concepts" % (iou_table.shape, len(concepts))
        )
    if unit_ids is None:
        unit_ids = list(range(iou_table.shape[0]))
    if len(unit_ids) != iou_table.shape[0]:
        raise ValueError("IoU table rows do not match the unit ids")

    # argmax keeps the first maximum, so order columns by concept id
    order = sorted(range(len(concepts)), key=lambda k: concepts[k].concept_id)
    table = iou_table[:, order]
    ranked = [concepts[k] for k in order]

    units = []
    assigned = {}
    for unit_id, row in zip(unit_ids, table):
        best = int(np.argmax(row))
        concept = ranked[best]
        iou = float(row[best])
        interpretable = iou >= iou_threshold
        if interpretable:
            assigned.setdefault(concept.category, set()).add(concept.concept_id)
        units.append(
            UnitInterpretation(
                int(unit_id), concept.concept_id, concept.name, concept.category, iou, interpretable
            )
        )

    counts = {category: len(assigned[category]) for category in CATEGORIES if category in assigned}
    return InterpretationReport(
        units=tuple(units),
        category_counts=counts,
        interpretable_units=sum(u.interpretable for u in units),
        iou_threshold=iou_threshold,
    )


# ============================================================================
def concept_mask_stack(masks, concept_id, image_ids, image_size):
    """images×H×W union of a concept's masks, empty where an image lacks it"""
    index = {image_id: num for num, image_id in enumerate(image_ids)}
    stack = np.zeros((len(image_ids),) + tuple(image_size), dtype=bool)
    for mask in masks:
        if mask.concept_id != concept_id:
            continue
        if mask.image_id not in index:
            raise ValueError("mask references unknown image '%s'" % mask.image_id)
        if mask.mask.shape != tuple(image_size):
            raise ValueError(
                "mask for image '%s' has shape %s, expected %s"
                % (mask.image_id, mask.mask.shape, tuple(image_size))
            )
        stack[index[mask.image_id]] |= mask.mask
    return stack


def restrict_categories(concepts, categories):
    """Concepts whose category is in `categories`"""
    categories = set(categories)
    unknown = categories - set(CATEGORIES)
    if unknown:
        raise ValueError("unknown categories: %s" % ", ".join(sorted(unknown)))
    return [c for c in concepts if c.category in categories]


def dissect_units(
    units,
    masks,
    concepts,
    image_ids,
    image_size,
    quantile=DEFAULT_QUANTILE,
    iou_threshold=DEFAULT_IOU_THRESHOLD,
):
    """Thresholds, upsamples and scores every unit against every concept"""
    units = list(units)
    concepts = list(concepts)
    if not units:
        raise ValueError("no units to dissect")
    if not concepts:
        raise ValueError("no concepts to dissect against")

    known = {c.concept_id for c in concepts}
    masks = [m for m in masks if m.concept_id in known]
    for mask in masks:
        if mask.image_id not in set(image_ids):
            raise ValueError("mask references unknown image '%s'" % mask.image_id)

    stacks = [concept_mask_stack(masks, c.concept_id, image_ids, image_size) for c in concepts]

    table = np.zeros((len(units), len(concepts)))
    for row, unit in enumerate(units):
        if unit.grids.shape[0] != len(image_ids):
            raise ValueError(
                "unit %d has activations for %d images, expected %d"
                % (unit.unit_id, unit.grids.shape[0], len(image_ids))
            )
        threshold = unit_threshold(unit, quantile)
        unit_masks = [binarize_and_upsample(g, threshold, image_size) for g in unit.grids]
        for col, stack in enumerate(stacks):
            table[row, col] = unit_concept_iou(unit_masks, stack)
        logger.debug("unit %d: threshold %.6g, best IoU %.4f", unit.unit_id, threshold, table[row].max())

    return assign_concepts(table, concepts, [u.unit_id for u in units], iou_threshold)


def units_from_tensor(tensor):
    """Splits a units×images×h×w tensor into UnitActivations"""
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 4:
        raise ValueError("activations must be units×images×h×w, got shape %s" % (tensor.shape,))
    return [UnitActivations(num, grids) for num, grids in enumerate(tensor)]


def tally_blocks(reports):
    """Interpretable units per category for each named block (ordered as
    given), e.g. to see where action detectors emerge in a network
    """
    tally = {}
    for block, report in reports.items():
        counts = {}
        for unit in report.units:
            if unit.interpretable:
                counts[unit.category] = counts.get(unit.category, 0) + 1
        tally[block] = {c: counts[c] for c in CATEGORIES if c in counts}
    return tally


def report_csv(reports):
    """Per-unit CSV over one or more named blocks"""
    buff = io.StringIO()
    writer = csv.writer(buff, lineterminator="\n")
    writer.writerow(["block"] + CSV_HEADER)
    for block, report in reports.items():
        for row in report.csv_rows():
            writer.writerow([block] + row)
    return buff.getvalue()


# ============================================================================
def probe_unit(model, unit):
    """Classes ranked by their output when only `unit` of the head input is
    1 and every other input and bias is 0, i.e. the sorted head row
    """
    weight = model.weight if hasattr(model, "weight") else np.asarray(model)
    if not 0 <= unit < weight.shape[0]:
        raise ValueError("unit %d out of range for %d head inputs" % (unit, weight.shape[0]))

    one_hot = np.zeros(weight.shape[0])
    one_hot[unit] = 1.0
    scores = one_hot @ weight
    return [int(c) for c in np.argsort(-scores, kind="stable")]

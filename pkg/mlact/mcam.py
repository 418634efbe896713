"""
Multi-label class activation mapping.

Per-class CAMs are compared pairwise; where two sufficiently different maps
are both active with similar values, the pixel is erased from both. The
altered maps are max-pooled into one composite with disjoint per-class
masks and boundaries along the erased overlap, then smoothed.
"""
import itertools
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True, eq=False)
class ActivationMap:
    grid: np.ndarray
    class_id: int = None
    erased: np.ndarray = None

    def __post_init__(self):
        grid = np.array(self.grid, dtype=np.float64)
        if grid.ndim != 2 or grid.size == 0:
            raise ValueError("activation maps must be non-empty 2-D grids")
        if not np.all(np.isfinite(grid)):
            raise ValueError("activation maps must be finite")
        object.__setattr__(self, "grid", grid)

        erased = self.erased
        if erased is None:
            erased = np.zeros(grid.shape, dtype=bool)
        erased = np.array(erased, dtype=bool)
        if erased.shape != grid.shape:
            raise ValueError("erased mask shape does not match the grid")
        object.__setattr__(self, "erased", erased)

    @property
    def shape(self):
        return self.grid.shape


@dataclass(frozen=True, eq=False)
class FeatureStack:
    maps: np.ndarray

    def __post_init__(self):
        maps = np.array(self.maps, dtype=np.float64)
        if maps.ndim != 3 or 0 in maps.shape:
            raise ValueError("a feature stack must be a non-empty D×H×W array")
        object.__setattr__(self, "maps", maps)

    @property
    def depth(self):
        return self.maps.shape[0]


@dataclass(frozen=True, eq=False)
class RegionMap:
    """`composite` is the smoothed max-pool; `pooled` the max-pool before
    smoothing
    """

    composite: np.ndarray
    pooled: np.ndarray
    per_class_masks: dict
    boundaries: np.ndarray


def _check_shapes(maps):
    if not maps:
        raise ValueError("at least one activation map is required")
    shape = maps[0].shape
    for cam in maps[1:]:
        if cam.shape != shape:
            raise ValueError("activation map shapes differ: %s vs %s" % (shape, cam.shape))
    return shape


# ============================================================================
def compute_cam(features, head_weights, class_id):
    """CAM_c = sum over d of head_weights[d, c] * features[d]"""
    if not isinstance(features, FeatureStack):
        features = FeatureStack(features)
    head_weights = np.asarray(head_weights, dtype=np.float64)
    if head_weights.ndim != 2 or head_weights.shape[0] != features.depth:
        raise ValueError(
            "head weights %s do not align with %d feature maps"
            % (head_weights.shape, features.depth)
        )
    if not 0 <= class_id < head_weights.shape[1]:
        raise ValueError(
            "class %d out of range for %d classes" % (class_id, head_weights.shape[1])
        )

    grid = np.tensordot(head_weights[:, class_id], features.maps, axes=1)
    return ActivationMap(grid, class_id)


def normalize(grid):
    """Min-max scaling to [0, 1]; constant grids become all zeros"""
    low, high = grid.min(), grid.max()
    if high <= low:
        return np.zeros_like(grid)
    return (grid - low) / (high - low)


def cosine_distance(a, b):
    """1 - cos(a, b) over flattened grids; 0 when either grid is all zero"""
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0.0:
        return 0.0
    return 1.0 - float(np.dot(a.ravel(), b.ravel()) / norm)


def _erase_set(grids, cosine_threshold, similarity_delta, activation_floor):
    normalized = [normalize(grid) for grid in grids]
    erase = [np.zeros(grid.shape, dtype=bool) for grid in grids]

    for i, j in itertools.combinations(range(len(grids)), 2):
        a, b = normalized[i], normalized[j]
        if cosine_distance(a, b) <= cosine_threshold:
            continue
        similar = (np.abs(a - b) <= similarity_delta) & (
            np.minimum(a, b) >= activation_floor
        )
        erase[i] |= similar
        erase[j] |= similar

    return erase


def separate_regions(
    cams, cosine_threshold=1e-4, similarity_delta=0.1, activation_floor=0.2
):
    """Zeroes the pixels where two distinct CAMs agree.

    Decisions are made on min-max normalized copies: for every pair whose
    cosine distance exceeds the threshold, pixels with |a - b| <= delta and
    both values >= floor are zeroed in both maps. All pairs are collected
    before zeroing, and the pass repeats until nothing changes, so the
    result does not depend on pair order and a second call is a no-op.
    The returned maps keep their original values elsewhere.
    """
    cams = list(cams)
    _check_shapes(cams)

    grids = [cam.grid.copy() for cam in cams]
    erased = [cam.erased.copy() for cam in cams]
    while True:
        erase = _erase_set(grids, cosine_threshold, similarity_delta, activation_floor)
        changed = False
        for grid, done, mask in zip(grids, erased, erase):
            fresh = mask & (grid != 0.0)
            if fresh.any():
                changed = True
            grid[mask] = 0.0
            done |= mask
        if not changed:
            break

    return [
        ActivationMap(grid, cam.class_id, done)
        for cam, grid, done in zip(cams, grids, erased)
    ]


# ============================================================================
def gaussian_kernel(kernel_size=5, sigma=1.0):
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError("kernel_size must be a positive odd number, got %d" % kernel_size)
    if sigma <= 0:
        raise ValueError("sigma must be positive")

    radius = kernel_size // 2
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def gaussian_smooth(cam, kernel_size=5, sigma=1.0):
    """2-D convolution with a normalized Gaussian, reflect padding"""
    kernel = gaussian_kernel(kernel_size, sigma)
    radius = kernel_size // 2
    padded = np.pad(cam.grid, radius, mode="reflect")
    windows = sliding_window_view(padded, kernel.shape)
    smoothed = np.einsum("ijkl,kl->ij", windows, kernel)
    return ActivationMap(smoothed, cam.class_id, cam.erased)


def _neighbourhood_any(mask):
    """True where the 3×3 neighbourhood of a pixel touches the mask"""
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    return sliding_window_view(padded, (3, 3)).any(axis=(2, 3))


def _components(mask):
    """Yields the 8-connected components of a boolean mask"""
    remaining = mask.copy()
    while remaining.any():
        component = np.zeros(mask.shape, dtype=bool)
        component[np.unravel_index(np.argmax(remaining), mask.shape)] = True
        while True:
            grown = _neighbourhood_any(component) & remaining
            if (grown == component).all():
                break
            component = grown
        remaining &= ~component
        yield component


def compose_multi_cam(separated, kernel_size=5, sigma=1.0):
    """Max-pools the separated CAMs into a RegionMap.

    Each pixel with a strictly positive maximum belongs to the first map
    (lowest class id, then input order) reaching it. Boundaries are the
    8-connected components of erased pixels whose 3×3 rim touches at
    least two class masks. Maps without a class id are keyed by input
    position, which cannot be mixed with explicit ids.
    """
    separated = list(separated)
    _check_shapes(separated)
    unlabelled = [cam.class_id is None for cam in separated]
    if any(unlabelled) and not all(unlabelled):
        raise ValueError("class ids must be given for every map or for none")

    order = sorted(
        range(len(separated)),
        key=lambda k: (
            separated[k].class_id is None,
            separated[k].class_id if separated[k].class_id is not None else 0,
            k,
        ),
    )
    stack = np.stack([separated[k].grid for k in order])
    composite = stack.max(axis=0)
    winner = np.argmax(stack, axis=0)

    masks = {}
    for pos, k in enumerate(order):
        class_id = separated[k].class_id if separated[k].class_id is not None else k
        mask = (winner == pos) & (composite > 0.0)
        if class_id in masks:
            masks[class_id] |= mask
        else:
            masks[class_id] = mask

    claimed = np.zeros(composite.shape, dtype=np.int64)
    for mask in masks.values():
        claimed += mask
    if np.any(claimed > 1):
        raise RuntimeError("class masks overlap")

    erased = np.logical_or.reduce([cam.erased for cam in separated])
    boundaries = np.zeros(composite.shape, dtype=bool)
    for component in _components(erased):
        rim = _neighbourhood_any(component)
        if sum(bool((mask & rim).any()) for mask in masks.values()) >= 2:
            boundaries |= component

    smoothed = gaussian_smooth(ActivationMap(composite), kernel_size, sigma)
    return RegionMap(smoothed.grid, composite, masks, boundaries)


def multi_cam(
    features,
    head_weights,
    class_ids,
    cosine_threshold=1e-4,
    similarity_delta=0.1,
    activation_floor=0.2,
    kernel_size=5,
    sigma=1.0,
):
    """CAM per class, region separation and composition in one call"""
    if not class_ids:
        raise ValueError("at least one class id is required")
    if len(set(class_ids)) != len(class_ids):
        raise ValueError("duplicate class ids")

    cams = [compute_cam(features, head_weights, c) for c in class_ids]
    separated = separate_regions(cams, cosine_threshold, similarity_delta, activation_floor)
    return compose_multi_cam(separated, kernel_size, sigma)


def region_summary(region_map):
    """Pixel count and bounding box [x0, y0, x1, y1) per class mask"""
    summary = {}
    for class_id in sorted(region_map.per_class_masks):
        mask = region_map.per_class_masks[class_id]
        ys, xs = np.nonzero(mask)
        bbox = None
        if ys.size:
            bbox = [int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1]
        summary[str(class_id)] = {"pixels": int(mask.sum()), "bbox": bbox}
    return summary

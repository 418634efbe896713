"""
Binary and text file formats: TensorFile, PGM images, concept index CSV
and rectangle region lists.
"""
import csv
import json
import os
import struct

import numpy as np

from mlact.dissect import Concept, ConceptMask

TENSOR_MAGIC = b"MMTT"
TENSOR_VERSION = 1

# magic, version, ndim
_HEADER = struct.Struct("<4sBB")
_DIM = struct.Struct("<I")


# ============================================================================
def _write_tensor(fh, tensor):
    array = np.ascontiguousarray(tensor, dtype="<f8")
    if array.ndim > 255:
        raise ValueError("tensor has too many dimensions: %d" % array.ndim)

    fh.write(_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, array.ndim))
    for dim in array.shape:
        fh.write(_DIM.pack(dim))
    fh.write(array.tobytes(order="C"))


def _read_exact(fh, size, what):
    buff = fh.read(size)
    if len(buff) != size:
        raise ValueError("truncated tensor file while reading %s" % what)
    return buff


def _read_tensor(fh):
    """Reads one tensor, or returns None at a clean end of file"""
    head = fh.read(_HEADER.size)
    if not head:
        return None

    if len(head) < 4 or head[:4] != TENSOR_MAGIC:
        raise ValueError("not a tensor file: bad magic %r" % head[:4])

    if len(head) != _HEADER.size:
        raise ValueError("truncated tensor file while reading header")

    _, version, ndim = _HEADER.unpack(head)
    if version != TENSOR_VERSION:
        raise ValueError("unsupported tensor file version %d" % version)

    shape = tuple(
        _DIM.unpack(_read_exact(fh, _DIM.size, "dims"))[0] for _ in range(ndim)
    )
    count = int(np.prod(shape, dtype=np.int64))
    payload = _read_exact(fh, 8 * count, "payload")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def write_tensors(path, tensors):
    """Writes a sequence of tensors to one file, back to back"""
    with open(path, "wb") as fh:
        for tensor in tensors:
            _write_tensor(fh, tensor)


def write_tensor(path, tensor):
    write_tensors(path, [tensor])


def read_tensors(path):
    """Returns every tensor stored in the file, in order"""
    tensors = []
    with open(path, "rb") as fh:
        while True:
            tensor = _read_tensor(fh)
            if tensor is None:
                break
            tensors.append(tensor)

    if not tensors:
        raise ValueError("empty tensor file: %s" % path)

    return tensors


def read_tensor(path):
    """Reads the first tensor of a file"""
    with open(path, "rb") as fh:
        tensor = _read_tensor(fh)

    if tensor is None:
        raise ValueError("empty tensor file: %s" % path)

    return tensor


# ============================================================================
def scale_to_bytes(grid):
    """Min-max scales a grid to 0..255; a constant grid maps to zeros"""
    grid = np.asarray(grid, dtype=np.float64)
    low, high = grid.min(), grid.max()
    if high <= low:
        return np.zeros(grid.shape, dtype=np.uint8)

    scaled = (grid - low) / (high - low) * 255.0
    return np.rint(scaled).astype(np.uint8)


def write_pgm(path, pixels):
    """Writes an 8-bit binary (P5) grayscale image"""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError("PGM images must be 2-D, got shape %s" % (pixels.shape,))

    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(("P5\n%d %d\n255\n" % (width, height)).encode("ascii"))
        fh.write(pixels.astype(np.uint8).tobytes())


def write_mask_pgm(path, mask):
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0))


def read_pgm(path):
    """Reads a binary (P5) PGM with maxval < 256"""
    with open(path, "rb") as fh:
        data = fh.read()

    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header: %s" % path)
        tokens.append(data[start:pos])

    if tokens[0] != b"P5":
        raise ValueError("only binary PGM (P5) is supported: %s" % path)

    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError("16-bit PGM is not supported: %s" % path)

    # exactly one whitespace byte separates header and raster
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise ValueError("truncated PGM raster: %s" % path)

    return pixels.reshape(height, width)


# ============================================================================
def read_concepts(path):
    """Reads the concept index CSV (concept_id, name, category)"""
    concepts = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"concept_id", "name", "category"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(
                "concept index is missing columns: %s" % ", ".join(sorted(missing))
            )

        for row in reader:
            try:
                concept_id = int(row["concept_id"])
            except ValueError:
                raise ValueError(
                    "line %d: invalid concept_id %r" % (reader.line_num, row["concept_id"])
                )
            if concept_id in seen:
                raise ValueError(
                    "line %d: duplicate concept_id %d" % (reader.line_num, concept_id)
                )
            seen.add(concept_id)
            concepts.append(Concept(concept_id, row["name"], row["category"]))

    return concepts


def write_concepts(path, concepts):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["concept_id", "name", "category"])
        for concept in concepts:
            writer.writerow([concept.concept_id, concept.name, concept.category])


def read_image_ids(path):
    """Reads one image id per line, blank lines ignored"""
    with open(path) as fh:
        ids = [line.strip() for line in fh if line.strip()]

    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids in %s" % path)

    return ids


def read_rectangles(path, image_size):
    """Reads a JSON list of {image_id, concept_id, x0, y0, x1, y1} boxes and
    returns them as filled ConceptMasks (x1/y1 exclusive)
    """
    with open(path) as fh:
        regions = json.load(fh)

    if not isinstance(regions, list):
        raise ValueError("rectangle file must hold a JSON list: %s" % path)

    height, width = image_size
    masks = []
    for num, region in enumerate(regions):
        try:
            x0, y0, x1, y1 = (int(region[k]) for k in ("x0", "y0", "x1", "y1"))
            image_id = str(region["image_id"])
            concept_id = int(region["concept_id"])
        except (KeyError, TypeError, ValueError):
            raise ValueError("region %d: malformed rectangle %r" % (num, region))

        if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
            raise ValueError(
                "region %d: rectangle (%d,%d)-(%d,%d) outside %dx%d image"
                % (num, x0, y0, x1, y1, height, width)
            )

        mask = np.zeros((height, width), dtype=bool)
        mask[y0:y1, x0:x1] = True
        masks.append(ConceptMask(image_id, concept_id, mask))

    return masks


def read_mask_dir(path, image_size):
    """Reads PGM concept masks named <image_id>_<concept_id>.pgm; any nonzero
    pixel belongs to the concept
    """
    masks = []
    for filename in sorted(os.listdir(path)):
        stem, ext = os.path.splitext(filename)
        if ext.lower() != ".pgm":
            continue

        image_id, sep, concept = stem.rpartition("_")
        if not sep or not image_id:
            raise ValueError("mask file name must be <image>_<concept>.pgm: %s" % filename)
        try:
            concept_id = int(concept)
        except ValueError:
            raise ValueError("invalid concept id in mask file name: %s" % filename)

        pixels = read_pgm(os.path.join(path, filename))
        if pixels.shape != tuple(image_size):
            raise ValueError(
                "mask %s has shape %s, expected %s"
                % (filename, pixels.shape, tuple(image_size))
            )
        masks.append(ConceptMask(image_id, concept_id, pixels > 0))

    return masks

import unittest, os, json, struct, tempfile

import numpy as np

from mlact.dissect import Concept
from mlact.formats import (
    TENSOR_MAGIC,
    read_concepts,
    read_image_ids,
    read_mask_dir,
    read_pgm,
    read_rectangles,
    read_tensor,
    read_tensors,
    scale_to_bytes,
    write_concepts,
    write_mask_pgm,
    write_pgm,
    write_tensor,
    write_tensors,
)


class TestTensorFile(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmpdir.name, "tensor.mmtt")

    def tearDown(self):
        self.tmpdir.cleanup()

    def test_layout(self):
        write_tensor(self.path, [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        with open(self.path, "rb") as fh:
            data = fh.read()

        self.assertEqual(data[:4], b"MMTT")
        self.assertEqual(data[4], 1)
        self.assertEqual(data[5], 2)
        self.assertEqual(struct.unpack("<II", data[6:14]), (2, 3))
        self.assertEqual(struct.unpack("<6d", data[14:]), (1.0, 2.0, 3.0, 4.0, 5.0, 6.0))

    def test_lossless(self):
        rng = np.random.default_rng(0)
        tensor = rng.normal(size=(2, 3, 4)) * 1e-300
        write_tensor(self.path, tensor)
        np.testing.assert_array_equal(read_tensor(self.path), tensor)

    def test_sequence(self):
        write_tensors(self.path, [np.ones((2, 2)), np.arange(3.0)])
        first, second = read_tensors(self.path)
        self.assertEqual(first.shape, (2, 2))
        np.testing.assert_array_equal(second, [0.0, 1.0, 2.0])

    def test_bad_magic(self):
        with open(self.path, "wb") as fh:
            fh.write(b"XXXX\x01\x01" + struct.pack("<I", 1000000))
        with self.assertRaisesRegex(ValueError, "magic"):
            read_tensor(self.path)

    def test_bad_version(self):
        with open(self.path, "wb") as fh:
            fh.write(TENSOR_MAGIC + b"\x02\x01" + struct.pack("<I", 1) + b"\x00" * 8)
        with self.assertRaisesRegex(ValueError, "version"):
            read_tensor(self.path)

    def test_truncated(self):
        write_tensor(self.path, np.ones((4, 4)))
        with open(self.path, "rb") as fh:
            data = fh.read()
        with open(self.path, "wb") as fh:
            fh.write(data[:-8])
        with self.assertRaisesRegex(ValueError, "truncated"):
            read_tensor(self.path)

    def test_empty(self):
        open(self.path, "wb").close()
        with self.assertRaises(ValueError):
            read_tensors(self.path)


class TestPGM(unittest.TestCase):
    def test_round_trip(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "image.pgm")
            pixels = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
            write_pgm(path, pixels)
            with open(path, "rb") as fh:
                self.assertTrue(fh.read().startswith(b"P5\n4 3\n255\n"))
            np.testing.assert_array_equal(read_pgm(path), pixels)

            write_mask_pgm(path, pixels > 100)
            np.testing.assert_array_equal(read_pgm(path), np.where(pixels > 100, 255, 0))

    def test_scale(self):
        np.testing.assert_array_equal(scale_to_bytes([[0.0, 0.5, 1.0]]), [[0, 128, 255]])
        np.testing.assert_array_equal(scale_to_bytes(np.full((2, 2), 3.0)), np.zeros((2, 2)))


class TestConceptFiles(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmpdir.cleanup()

    def path(self, name):
        return os.path.join(self.tmpdir.name, name)

    def test_concepts_round_trip(self):
        concepts = [Concept(3, "running", "action"), Concept(1, "grass", "material")]
        write_concepts(self.path("concepts.csv"), concepts)
        self.assertEqual(read_concepts(self.path("concepts.csv")), concepts)

    def test_concepts_duplicate(self):
        with open(self.path("concepts.csv"), "w") as fh:
            fh.write("concept_id,name,category\n1,a,object\n1,b,scene\n")
        with self.assertRaisesRegex(ValueError, "duplicate"):
            read_concepts(self.path("concepts.csv"))

    def test_image_ids(self):
        with open(self.path("images.txt"), "w") as fh:
            fh.write("a\n\nb\n")
        self.assertEqual(read_image_ids(self.path("images.txt")), ["a", "b"])

    def test_rectangles(self):
        regions = [{"image_id": "a", "concept_id": 2, "x0": 1, "y0": 0, "x1": 3, "y1": 2}]
        with open(self.path("regions.json"), "w") as fh:
            json.dump(regions, fh)

        (mask,) = read_rectangles(self.path("regions.json"), (3, 4))
        self.assertEqual((mask.image_id, mask.concept_id), ("a", 2))
        np.testing.assert_array_equal(
            mask.mask,
            [[False, True, True, False], [False, True, True, False], [False] * 4],
        )

    def test_rectangle_outside(self):
        regions = [{"image_id": "a", "concept_id": 2, "x0": 1, "y0": 0, "x1": 5, "y1": 2}]
        with open(self.path("regions.json"), "w") as fh:
            json.dump(regions, fh)
        with self.assertRaises(ValueError):
            read_rectangles(self.path("regions.json"), (3, 4))

    def test_mask_dir(self):
        os.mkdir(self.path("masks"))
        mask = np.zeros((3, 4), dtype=bool)
        mask[1, 2] = True
        write_mask_pgm(self.path("masks/img_7_12.pgm"), mask)

        (loaded,) = read_mask_dir(self.path("masks"), (3, 4))
        self.assertEqual((loaded.image_id, loaded.concept_id), ("img_7", 12))
        np.testing.assert_array_equal(loaded.mask, mask)

        with self.assertRaises(ValueError):
            read_mask_dir(self.path("masks"), (4, 4))


if __name__ == "__main__":
    unittest.main()

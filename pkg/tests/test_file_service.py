"""
Unit tests for file service
"""
import os
import shutil
import sys
import tempfile
import unittest

import numpy as np

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from engines.isp import RGBImage
from engines.metrics import curves_from_frame, curves_to_frame
from engines.sensor import RawImage
from generators.scene_generator import plan_collection
from services.file_service import FileService
from utils.error_handler import DataError, FormatError

GOLDEN_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden")


class TestFileService(unittest.TestCase):

    def setUp(self):
        self.file_service = FileService()
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def path(self, *parts):
        return os.path.join(self.temp_dir, *parts)

    def read_bytes(self, path):
        with open(path, "rb") as handle:
            return handle.read()

    def test_json_is_sorted_and_atomic(self):
        """JSON files are written with sorted keys and no temporary file left behind"""
        target = self.path("nested", "run.json")
        self.file_service.write_json({"b": 1, "a": [1.5, None]}, target)
        with open(target, encoding="utf-8") as handle:
            self.assertEqual(handle.read(), '{\n  "a": [\n    1.5,\n    null\n  ],\n  "b": 1\n}\n')
        self.assertFalse(os.path.exists(target + ".tmp"))
        self.assertEqual(self.file_service.read_json(target), {"a": [1.5, None], "b": 1})

    def test_json_errors(self):
        broken = self.path("broken.json")
        with open(broken, "w", encoding="utf-8") as handle:
            handle.write("{")
        with self.assertRaises(FormatError):
            self.file_service.read_json(broken)
        with self.assertRaises(DataError):
            self.file_service.read_json(self.path("missing.json"))

    def test_sidecar_path(self):
        self.assertEqual(str(FileService.sidecar_path(os.path.join("a", "b.pgm"))), os.path.join("a", "b.pgm.json"))

    def test_raw_round_trip(self):
        dn = np.array([[0x0102, 64, 1023], [500, 0, 77]])
        raw = RawImage(dn, "GRBG", 10, 64, 0.004, 1.0 / 6.0, (2, 4))
        target = self.path("raw", "frame.pgm")
        self.file_service.write_raw(raw, target)

        data = self.read_bytes(target)
        header = b"P5\n3 2\n1023\n"
        self.assertTrue(data.startswith(header))
        self.assertEqual(data[len(header):len(header) + 2], b"\x02\x01")

        loaded = self.file_service.read_raw(target)
        np.testing.assert_array_equal(loaded.dn, raw.dn)
        self.assertEqual((loaded.cfa_pattern, loaded.bit_depth, loaded.black_level, loaded.origin),
                         ("GRBG", 10, 64, (2, 4)))
        self.assertEqual(loaded.exposure_time, 0.004)
        self.assertEqual(loaded.saturated_fraction, 1.0 / 6.0)

    def test_raw_format_errors(self):
        raw = RawImage(np.full((2, 2), 100), "RGGB", 10, 64, 0.004, 0.0)
        target = self.path("frame.pgm")
        self.file_service.write_raw(raw, target)
        with open(target, "ab") as handle:
            handle.write(b"\x00")
        with self.assertRaises(FormatError):
            self.file_service.read_raw(target)
        with open(target, "wb") as handle:
            handle.write(b"P2\n2 2\n1023\n1 2 3 4\n")
        with self.assertRaises(FormatError):
            self.file_service.read_raw(target)

    def test_rgb_round_trip(self):
        rgb = np.arange(4 * 6 * 3, dtype=np.uint8).reshape(4, 6, 3)
        image = RGBImage(rgb, {"scene_id": "s1", "exposure_time_s": 0.002}, (10, 20))
        target = self.path("rgb", "s1.png")
        self.file_service.write_rgb(image, target)
        loaded = self.file_service.read_rgb(target)
        np.testing.assert_array_equal(loaded.rgb, rgb)
        self.assertEqual(loaded.metadata, {"scene_id": "s1", "exposure_time_s": 0.002})
        self.assertEqual(loaded.origin, (10, 20))

    def test_ap_curve_table_is_byte_stable(self):
        golden = os.path.join(GOLDEN_DIR, "ap_curves.csv")
        curves = curves_from_frame(self.file_service.read_table(golden))
        self.assertEqual([c.camera_id for c in curves], ["p1.4_f2.4", "p2.0_f4.0"])
        target = self.path("ap_curves.csv")
        self.file_service.write_table(curves_to_frame(curves), target)
        self.assertEqual(self.read_bytes(target), self.read_bytes(golden))

    def test_mtf_table_is_byte_stable(self):
        golden = os.path.join(GOLDEN_DIR, "mtf50.csv")
        target = self.path("mtf50.csv")
        self.file_service.write_table(self.file_service.read_table(golden), target)
        self.assertEqual(self.read_bytes(target), self.read_bytes(golden))

    def test_unreadable_table(self):
        empty = self.path("empty.csv")
        open(empty, "w").close()
        with self.assertRaises(FormatError):
            self.file_service.read_table(empty)

    def test_manifest_round_trip(self):
        manifest = plan_collection("io", 4, scenes_per_distance=1)
        target = self.path("collection", "manifest.json")
        self.file_service.write_manifest(manifest, target)
        self.assertEqual(self.file_service.read_manifest(target), manifest)

    def test_spectral_image_round_trip(self):
        golden = os.path.join(GOLDEN_DIR, "scene.sif")
        image = self.file_service.read_spectral_image(golden)
        target = self.path("copy", "scene.sif")
        self.file_service.write_spectral_image(image, target)
        self.assertEqual(self.read_bytes(target), self.read_bytes(golden))


if __name__ == '__main__':
    unittest.main()

"""
Unit tests for the raw-to-display pipeline
"""
import os
import sys
import unittest

import numpy as np

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from engines.isp import RGBImage, demosaic, gray_world_gains, normalize_raw, process, render_display, to_luma
from engines.sensor import RawImage, cfa_channel_map
from utils.error_handler import ConfigurationError


def flat_raw(levels=(600, 400, 200), shape=(8, 10), pattern="RGGB", origin=(0, 0)) -> RawImage:
    cfa = cfa_channel_map(pattern, *shape, origin)
    dn = np.choose(cfa, levels)
    return RawImage(dn, pattern, 10, 64, 0.004, 0.0, origin)


class TestDemosaic(unittest.TestCase):

    def test_normalize(self):
        raw = flat_raw(levels=(1023, 64, 64))
        mosaic = normalize_raw(raw)
        self.assertEqual(mosaic.max(), 1.0)
        self.assertEqual(mosaic.min(), 0.0)

    def test_flat_channels_stay_flat(self):
        """A mosaic of per-channel constants demosaics to constant planes"""
        rgb = demosaic(flat_raw())
        expected = (np.array([600, 400, 200]) - 64) / 959.0
        for c in range(3):
            np.testing.assert_allclose(rgb[..., c], expected[c], rtol=1e-12)

    def test_measured_samples_kept(self):
        rng = np.random.default_rng(1)
        raw = RawImage(rng.integers(64, 1024, size=(6, 6)), "GRBG", 10, 64, 0.004, 0.0)
        rgb = demosaic(raw)
        mosaic = normalize_raw(raw)
        cfa = cfa_channel_map("GRBG", 6, 6)
        for c in range(3):
            np.testing.assert_array_equal(rgb[..., c][cfa == c], mosaic[cfa == c])

    def test_crop_origin_sets_phase(self):
        rgb = demosaic(flat_raw(origin=(1, 1)))
        self.assertAlmostEqual(rgb[0, 0, 0], (600 - 64) / 959.0, places=12)


class TestDisplay(unittest.TestCase):

    def test_gamma_encoding(self):
        linear = np.full((2, 2, 3), 0.5)
        out = render_display(linear, color_matrix=np.eye(3), gamma=2.2)
        self.assertTrue(np.all(out == 186))

    def test_clipping(self):
        linear = np.array([[[1.5, -0.2, 0.0]]])
        out = render_display(linear, color_matrix=np.eye(3))
        np.testing.assert_array_equal(out[0, 0], [255, 0, 0])

    def test_gray_world(self):
        linear = np.ones((4, 4, 3)) * np.array([0.2, 0.4, 0.1])
        gains = gray_world_gains(linear)
        balanced = (linear.reshape(-1, 3) * gains).mean(axis=0)
        self.assertAlmostEqual(balanced[0], balanced[1], places=12)
        self.assertAlmostEqual(balanced[1], balanced[2], places=12)

    def test_empty_channel_keeps_unit_gain(self):
        linear = np.ones((2, 2, 3)) * np.array([0.2, 0.4, 0.0])
        self.assertEqual(gray_world_gains(linear)[2], 1.0)

    def test_invalid_matrices(self):
        linear = np.full((2, 2, 3), 0.5)
        with self.assertRaises(ConfigurationError):
            render_display(linear, color_matrix=np.zeros((3, 3)))
        with self.assertRaises(ConfigurationError):
            render_display(linear, color_matrix=np.eye(2))
        with self.assertRaises(ConfigurationError):
            render_display(linear, gamma=0.0)


class TestProcess(unittest.TestCase):

    def test_process_metadata_and_origin(self):
        image = process(flat_raw(origin=(4, 6)), metadata={"scene_id": "s1"})
        self.assertIsInstance(image, RGBImage)
        self.assertEqual(image.origin, (4, 6))
        self.assertEqual(image.metadata["scene_id"], "s1")
        self.assertEqual(image.metadata["exposure_time_s"], 0.004)
        self.assertEqual(image.rgb.dtype, np.uint8)

    def test_gray_world_neutralizes_flat_field(self):
        image = process(flat_raw())
        self.assertEqual(len(np.unique(image.rgb)), 1)

    def test_rgb_image_validation(self):
        with self.assertRaises(ConfigurationError):
            RGBImage(np.zeros((4, 4)))

    def test_luma(self):
        self.assertAlmostEqual(float(to_luma(np.array([255.0, 255.0, 255.0]))), 255.0, places=9)


if __name__ == '__main__':
    unittest.main()

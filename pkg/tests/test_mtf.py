"""
Unit tests for MTF50 measurement
"""
import math
import os
import sys
import unittest

import numpy as np
from scipy import special

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from engines.mtf import (analytic_mtf, analytic_mtf50, edge_spread, half_crossing, mean_wavelength_nm,
                         measure_mtf50, mtf_from_esf)
from utils.config import GRID_F_NUMBERS, GRID_PIXEL_SIZES_UM, CameraConfig, default_camera_grid
from utils.error_handler import ConfigurationError, MetricError

ANCHOR = CameraConfig.build(1.4, 2.4)


def blurred_edge(sigma_px: float, rows: int = 40, cols: int = 60, angle_deg: float = 5.0) -> np.ndarray:
    """Point-sampled Gaussian-blurred step, dark on the left"""
    rr, cc = np.mgrid[0:rows, 0:cols]
    edge = cols / 2.0 + math.tan(math.radians(angle_deg)) * (rr - rows / 2.0)
    return 0.5 * (1.0 + special.erf((cc - edge) / (sigma_px * math.sqrt(2.0))))


class TestHalfCrossing(unittest.TestCase):

    def test_linear_interpolation(self):
        value, flagged = half_crossing(np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.6, 0.4]), nyquist=5.0)
        self.assertAlmostEqual(value, 1.5, places=12)
        self.assertFalse(flagged)

    def test_beyond_nyquist_is_flagged(self):
        _, flagged = half_crossing(np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.6, 0.4]), nyquist=1.0)
        self.assertTrue(flagged)

    def test_extrapolated_when_never_reached(self):
        value, flagged = half_crossing(np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.9, 0.8]), nyquist=5.0)
        self.assertAlmostEqual(value, 5.0, places=9)
        self.assertTrue(flagged)

    def test_flat_tail(self):
        with self.assertRaises(MetricError):
            half_crossing(np.array([0.0, 1.0, 2.0]), np.array([1.0, 1.0, 1.0]), nyquist=5.0)


class TestSlantedEdgeAnalysis(unittest.TestCase):

    def test_gaussian_edge(self):
        """A Gaussian blur of sigma pixels has MTF50 sqrt(ln 2 / 2) / (pi sigma)"""
        sigma = 1.5
        esf, slope, angle = edge_spread(blurred_edge(sigma))
        self.assertAlmostEqual(angle, 5.0, delta=0.2)
        frequencies, mtf = mtf_from_esf(esf)
        self.assertAlmostEqual(mtf[0], 1.0, places=12)
        measured, _ = half_crossing(frequencies, mtf, nyquist=0.5)
        expected = math.sqrt(math.log(2.0) / 2.0) / (math.pi * sigma)
        self.assertAlmostEqual(measured / expected, 1.0, delta=0.1)

    def test_sharper_edge_has_higher_mtf50(self):
        results = []
        for sigma in (0.8, 1.6):
            frequencies, mtf = mtf_from_esf(edge_spread(blurred_edge(sigma))[0])
            results.append(half_crossing(frequencies, mtf, nyquist=0.5)[0])
        self.assertGreater(results[0], results[1])

    def test_flat_image(self):
        with self.assertRaises(MetricError):
            edge_spread(np.ones((20, 20)))


class TestAnalyticMTF(unittest.TestCase):

    def test_unity_at_zero(self):
        self.assertAlmostEqual(float(analytic_mtf(ANCHOR, 0.0)[0]), 1.0, places=12)

    def test_crossing_is_half(self):
        result = analytic_mtf50(ANCHOR)
        self.assertAlmostEqual(float(analytic_mtf(ANCHOR, result.mtf50)[0]), 0.5, places=6)
        self.assertEqual(result.mode, "analytic")

    def test_below_diffraction_cutoff(self):
        for camera in default_camera_grid():
            cutoff = 1.0 / (mean_wavelength_nm(camera) * 1e-6 * camera.optics.f_number)
            self.assertLess(analytic_mtf50(camera).mtf50, cutoff)

    def test_monotone_over_grid(self):
        """Larger pixels and slower lenses both lower MTF50"""
        values = {(c.sensor.pixel_size_um, c.optics.f_number): analytic_mtf50(c).mtf50 for c in default_camera_grid()}
        for f_number in GRID_F_NUMBERS:
            row = [values[(p, f_number)] for p in GRID_PIXEL_SIZES_UM if (p, f_number) in values]
            self.assertTrue(all(a > b for a, b in zip(row, row[1:])))
        for pixel in GRID_PIXEL_SIZES_UM:
            column = [values[(pixel, n)] for n in GRID_F_NUMBERS if (pixel, n) in values]
            self.assertTrue(all(a > b for a, b in zip(column, column[1:])))

    def test_default_grid(self):
        grid = default_camera_grid()
        self.assertEqual(len(grid), 13)
        self.assertIn("p1.4_f2.4", [c.id for c in grid])


class TestMeasureMTF50(unittest.TestCase):

    def test_invalid_mode_and_channel(self):
        with self.assertRaises(ConfigurationError):
            measure_mtf50(ANCHOR, mode="knife_edge")
        with self.assertRaises(ConfigurationError):
            measure_mtf50(ANCHOR, channel="blue")

    def test_anchor_camera(self):
        """The 1.4 um f/2.4 camera measures about 140 cycles/mm"""
        result = measure_mtf50(ANCHOR, wave_step_nm=30.0)
        self.assertGreaterEqual(result.mtf50, 98.0)
        self.assertLessEqual(result.mtf50, 182.0)
        self.assertEqual(result.to_row()["camera_id"], "p1.4_f2.4")
        self.assertLess(result.mtf50, analytic_mtf50(ANCHOR).mtf50 * 1.05)

    def test_larger_pixels_measure_lower(self):
        small = measure_mtf50(CameraConfig.build(1.4, 4.0), wave_step_nm=30.0)
        large = measure_mtf50(CameraConfig.build(2.8, 4.0), wave_step_nm=30.0)
        self.assertGreater(small.mtf50, large.mtf50)


class TestMeasuredGrid(unittest.TestCase):
    """Slanted-edge MTF50 over the default camera grid at the 10 nm step"""

    @classmethod
    def setUpClass(cls):
        cls.values = {(c.sensor.pixel_size_um, c.optics.f_number): measure_mtf50(c).mtf50
                      for c in default_camera_grid()}

    def test_decreasing_in_pixel_size(self):
        for f_number in GRID_F_NUMBERS:
            row = [self.values[(p, f_number)] for p in GRID_PIXEL_SIZES_UM if (p, f_number) in self.values]
            self.assertTrue(all(a > b for a, b in zip(row, row[1:])), (f_number, row))

    def test_decreasing_in_f_number(self):
        for pixel in GRID_PIXEL_SIZES_UM:
            column = [self.values[(pixel, n)] for n in GRID_F_NUMBERS if (pixel, n) in self.values]
            self.assertTrue(all(a > b for a, b in zip(column, column[1:])), (pixel, column))

    def test_some_systems_share_mtf50(self):
        """Different pixel and aperture combinations land within 5% of each other"""
        cameras = sorted(self.values)
        close = [(a, b) for i, a in enumerate(cameras) for b in cameras[i + 1:]
                 if abs(self.values[a] - self.values[b]) <= 0.05 * max(self.values[a], self.values[b])]
        self.assertTrue(close)

    def test_anchor_near_140(self):
        self.assertAlmostEqual(self.values[(1.4, 2.4)] / 140.0, 1.0, delta=0.3)
        self.assertGreater(max(self.values.values()) / min(self.values.values()), 2.0)


if __name__ == '__main__':
    unittest.main()

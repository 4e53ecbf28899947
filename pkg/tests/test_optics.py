"""
Unit tests for the diffraction-limited optics model
"""
import os
import sys
import tempfile
import unittest

import numpy as np
import pandas as pd

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from engines.optics import (OpticsConfig, apply_optics, cutoff_frequency, diffraction_otf, export_otf_csv,
                            psf_radius_mm, radiance_to_irradiance_scale, relative_illumination_map)
from engines.spectral import IRRADIANCE, RADIANCE, SpectralImage
from generators.scene_generator import RenderConfig, auto_supersample, generate_slanted_edge
from utils.error_handler import DomainError, SamplingError, UnitError

PIXEL_MM = 0.0014


def closed_form_otf(f, wavelength_nm, f_number):
    fc = 1.0 / (wavelength_nm * 1e-6 * f_number)
    if f >= fc:
        return 0.0
    phi = np.arccos(f / fc)
    return (2.0 / np.pi) * (phi - np.cos(phi) * np.sin(phi))


def resolved_scene(values: np.ndarray, f_number: float = 2.4) -> SpectralImage:
    supersample = auto_supersample(PIXEL_MM * 1e3, f_number)
    return SpectralImage(values, 400.0, 30.0, PIXEL_MM / supersample, RADIANCE)


class TestDiffractionOTF(unittest.TestCase):

    def test_matches_closed_form(self):
        """1000 random (f, wavelength, N) triples agree with the circular-pupil formula"""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            wavelength = rng.uniform(400.0, 700.0)
            f_number = rng.uniform(1.4, 16.0)
            fc = float(cutoff_frequency(wavelength, f_number))
            f = rng.uniform(0.0, 1.2 * fc)
            value = float(diffraction_otf(f, wavelength, f_number))
            self.assertLessEqual(abs(value - closed_form_otf(f, wavelength, f_number)), 1e-9)

    def test_endpoints_are_exact(self):
        for wavelength, f_number in [(400.0, 1.8), (550.0, 2.4), (700.0, 5.6)]:
            fc = cutoff_frequency(wavelength, f_number)
            self.assertEqual(float(diffraction_otf(0.0, wavelength, f_number)), 1.0)
            self.assertEqual(float(diffraction_otf(fc, wavelength, f_number)), 0.0)
            self.assertEqual(float(diffraction_otf(2 * fc, wavelength, f_number)), 0.0)

    def test_monotone_and_bounded(self):
        f = np.linspace(0.0, 1500.0, 2001)
        otf = diffraction_otf(f, 550.0, 2.4)
        self.assertTrue(np.all(np.diff(otf) <= 0))
        self.assertTrue(np.all((otf >= 0) & (otf <= 1)))

    def test_negative_frequency(self):
        with self.assertRaises(DomainError):
            diffraction_otf(-1.0, 550.0, 2.4)


class TestApplyOptics(unittest.TestCase):

    def test_camera_equation_scale(self):
        self.assertAlmostEqual(radiance_to_irradiance_scale(2.4), 0.13635, places=5)

    def test_uniform_scene(self):
        """Uniform unit radiance at f/2.4 becomes uniform 0.13635 irradiance"""
        scene = resolved_scene(np.ones((11, 24, 24)))
        result = apply_optics(scene, OpticsConfig(f_number=2.4))
        self.assertEqual(result.irradiance.unit_tag, IRRADIANCE)
        np.testing.assert_allclose(result.irradiance.values, radiance_to_irradiance_scale(2.4), rtol=1e-9)
        self.assertAlmostEqual(float(result.irradiance.values.mean()), 0.13635, places=5)
        self.assertEqual(result.clamped, 0)

    def test_zero_scene(self):
        result = apply_optics(resolved_scene(np.zeros((11, 12, 12))), OpticsConfig())
        self.assertFalse(result.irradiance.values.any())

    def test_band_means_preserved(self):
        """Per-band mean survives filtering up to the camera-equation factor"""
        rng = np.random.default_rng(3)
        scene = resolved_scene(1.0 + 0.2 * rng.random((11, 30, 36)))
        result = apply_optics(scene, OpticsConfig(f_number=2.4))
        scale = radiance_to_irradiance_scale(2.4)
        np.testing.assert_allclose(result.irradiance.band_means(), scene.band_means() * scale, rtol=1e-9)

    def test_linearity(self):
        rng = np.random.default_rng(4)
        x = 1.0 + rng.random((11, 18, 18))
        y = 1.0 + rng.random((11, 18, 18))
        optics = OpticsConfig(f_number=2.4)
        combined = apply_optics(resolved_scene(2.0 * x + 3.0 * y), optics).irradiance.values
        separate = (2.0 * apply_optics(resolved_scene(x), optics).irradiance.values
                    + 3.0 * apply_optics(resolved_scene(y), optics).irradiance.values)
        np.testing.assert_allclose(combined, separate, rtol=1e-9)

    def test_blur_grows_with_f_number(self):
        """The same edge is softer at f/8 than at f/2"""
        config = RenderConfig(pixel_size_um=1.4, supersample=auto_supersample(1.4, 2.0), wave_step_nm=30.0)
        edge = generate_slanted_edge(config, size_px=16, angle_deg=0.0)
        band = 5  # 550 nm
        sharp = apply_optics(edge, OpticsConfig(f_number=2.0)).irradiance.values[band]
        soft = apply_optics(edge, OpticsConfig(f_number=8.0)).irradiance.values[band]
        row = edge.height // 2
        self.assertGreater(np.abs(np.diff(sharp[row])).max() / sharp[row].max(),
                           np.abs(np.diff(soft[row])).max() / soft[row].max())

    def test_no_negative_output(self):
        config = RenderConfig(pixel_size_um=1.4, supersample=auto_supersample(1.4, 2.4), wave_step_nm=30.0)
        edge = generate_slanted_edge(config, size_px=16, dark=0.0)
        result = apply_optics(edge, OpticsConfig(f_number=2.4))
        self.assertGreaterEqual(result.irradiance.values.min(), 0.0)
        self.assertGreaterEqual(result.clamped, 0)

    def test_undersampled_grid(self):
        scene = SpectralImage(np.ones((11, 8, 8)), 400.0, 30.0, PIXEL_MM, RADIANCE)
        with self.assertRaises(SamplingError):
            apply_optics(scene, OpticsConfig(f_number=2.4))

    def test_requires_radiance(self):
        scene = resolved_scene(np.ones((11, 6, 6)))
        with self.assertRaises(UnitError):
            apply_optics(scene.with_values(scene.values, IRRADIANCE), OpticsConfig())

    def test_relative_illumination(self):
        scene = resolved_scene(np.ones((11, 24, 24)))
        flat = apply_optics(scene, OpticsConfig(f_number=2.4)).irradiance.values
        falloff = apply_optics(scene, OpticsConfig(f_number=2.4, relative_illumination=True),
                               field_center_mm=(2.0, 1.5)).irradiance.values
        self.assertTrue(np.all(falloff < flat))


class TestPSFRadius(unittest.TestCase):

    def test_three_airy_radii(self):
        self.assertAlmostEqual(psf_radius_mm(550.0, 2.4), 3 * 1.22 * 550e-6 * 2.4, places=15)
        self.assertGreater(psf_radius_mm(550.0, 5.6), psf_radius_mm(550.0, 2.4))


class TestRelativeIllumination(unittest.TestCase):

    def test_cos4_falloff(self):
        falloff = relative_illumination_map((5, 5), 1.0, 6.0)
        self.assertEqual(falloff[2, 2], 1.0)
        self.assertAlmostEqual(falloff[2, 4], (36.0 / 40.0) ** 2, places=12)
        self.assertLess(falloff[0, 0], falloff[0, 2])


class TestOTFExport(unittest.TestCase):

    def test_csv_columns(self):
        path = os.path.join(tempfile.mkdtemp(), "otf.csv")
        export_otf_csv(OpticsConfig(f_number=2.4), [450.0, 550.0], [0.0, 100.0, 500.0], path)
        table = pd.read_csv(path, float_precision="round_trip")
        self.assertEqual(list(table.columns), ["frequency_cyc_per_mm", "otf_450nm", "otf_550nm"])
        self.assertEqual(table["otf_550nm"].iloc[0], 1.0)
        self.assertAlmostEqual(table["otf_450nm"].iloc[1], float(diffraction_otf(100.0, 450.0, 2.4)), places=15)


if __name__ == '__main__':
    unittest.main()

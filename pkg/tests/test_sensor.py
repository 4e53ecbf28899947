"""
Unit tests for the sensor model: integration, exposure, noise and quantization
"""
import os
import sys
import tempfile
import unittest
from unittest.mock import patch

import numpy as np
import pydantic

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from engines.optics import OpticsConfig, apply_optics
from engines.sensor import (MAX_EXPOSURE_S, ExposurePolicy, QECurves, SensorConfig, auto_exposure, capture,
                            central_window, cfa_channel_map, expected_electrons, expected_voltage,
                            load_qe_csv, sample_electrons, save_qe_csv)
from engines.spectral import IRRADIANCE, RADIANCE, SpectralImage, blackbody_spd, scale_to_illuminance
from generators.scene_generator import auto_supersample
from utils.error_handler import SamplingError, UnitError

WAVELENGTHS = np.arange(400.0, 701.0, 30.0)


def irradiance_image(values: np.ndarray, sensor: SensorConfig, supersample: int = 1) -> SpectralImage:
    return SpectralImage(values, 400.0, 30.0, sensor.pixel_pitch_mm / supersample, IRRADIANCE)


class TestSensorConfig(unittest.TestCase):

    def test_defaults(self):
        sensor = SensorConfig()
        self.assertEqual(sensor.resolution, (3021, 4028))
        self.assertAlmostEqual(sensor.gain_v_per_e, 1.0 / 6000.0)
        self.assertEqual(sensor.full_scale, 1023)

    def test_resolution_follows_pixel_size(self):
        self.assertEqual(SensorConfig(pixel_size_um=2.8).resolution, (1510, 2014))

    def test_invalid_fields(self):
        with self.assertRaises(pydantic.ValidationError):
            SensorConfig(cfa_pattern="RGBW")
        with self.assertRaises(pydantic.ValidationError):
            SensorConfig(conversion_gain=1e-3)
        with self.assertRaises(pydantic.ValidationError):
            SensorConfig(black_level=2000)

    def test_cfa_phase_follows_origin(self):
        full = cfa_channel_map("RGGB", 8, 8)
        crop = cfa_channel_map("RGGB", 4, 4, origin=(1, 3))
        np.testing.assert_array_equal(crop, full[1:5, 3:7])

    def test_qe_csv_round_trip(self):
        path = os.path.join(tempfile.mkdtemp(), "qe.csv")
        curves = QECurves(wavelengths_nm=[400.0, 550.0, 700.0], r=[0.05, 0.2, 0.55],
                          g=[0.1, 0.6, 0.1], b=[0.45, 0.15, 0.01])
        save_qe_csv(SensorConfig(qe=curves), path)
        self.assertEqual(load_qe_csv(path), curves)


class TestIntegration(unittest.TestCase):

    def setUp(self):
        self.sensor = SensorConfig(pixel_size_um=1.4)

    def test_supersample_blocks_are_averaged(self):
        values = np.ones((WAVELENGTHS.size, 6, 6))
        coarse = expected_electrons(irradiance_image(values[:, :2, :2], self.sensor), self.sensor, 1e-3)
        fine = expected_electrons(irradiance_image(values, self.sensor, 3), self.sensor, 1e-3)
        np.testing.assert_allclose(fine, coarse, rtol=1e-12)

    def test_pitch_must_divide(self):
        image = SpectralImage(np.ones((WAVELENGTHS.size, 5, 5)), 400.0, 30.0, 0.0006, IRRADIANCE)
        with self.assertRaises(SamplingError):
            expected_electrons(image, self.sensor, 1e-3)

    def test_requires_irradiance(self):
        image = SpectralImage(np.ones((WAVELENGTHS.size, 2, 2)), 400.0, 30.0, 0.0014, RADIANCE)
        with self.assertRaises(UnitError):
            expected_electrons(image, self.sensor, 1e-3)

    def test_monotone_in_illuminance(self):
        """Brighter irradiance never lowers a noise-free DN below saturation"""
        rng = np.random.default_rng(8)
        base = rng.uniform(0.0, 1e-4, size=(WAVELENGTHS.size, 8, 8))
        previous = None
        for gain in (1.0, 2.0, 5.0, 20.0):
            raw = capture(irradiance_image(base * gain, self.sensor), self.sensor, 0.01, seed=0, noise=False)
            if previous is not None:
                self.assertTrue(np.all(raw.dn >= previous))
            previous = raw.dn


class TestAutoExposure(unittest.TestCase):

    def setUp(self):
        self.sensor = SensorConfig()
        self.image = irradiance_image(np.ones((WAVELENGTHS.size, 3, 3)), self.sensor)

    def test_linear_scaling_example(self):
        """Central peak 0.45 V at the 1 ms probe gives 2 ms"""
        with patch("engines.sensor.expected_voltage", return_value=np.full((3, 3), 0.45)):
            self.assertAlmostEqual(auto_exposure(self.image, self.sensor), 0.002, places=15)

    def test_clamped_to_maximum(self):
        """A 40 ms requirement returns 16 ms"""
        with patch("engines.sensor.expected_voltage", return_value=np.full((3, 3), 0.9 / 40.0)):
            self.assertEqual(auto_exposure(self.image, self.sensor), MAX_EXPOSURE_S)

    def test_dark_scene(self):
        dark = irradiance_image(np.zeros((WAVELENGTHS.size, 3, 3)), self.sensor)
        self.assertEqual(auto_exposure(dark, self.sensor), MAX_EXPOSURE_S)

    def test_peak_hits_ninety_percent(self):
        """Re-simulating at the chosen exposure puts the central peak at 0.9 of the swing"""
        rng = np.random.default_rng(11)
        policy = ExposurePolicy()
        checked = 0
        for _ in range(100):
            values = rng.uniform(0.0, 1.0, size=(WAVELENGTHS.size, 12, 12)) * rng.uniform(0.01, 1.0)
            image = irradiance_image(values, self.sensor)
            exposure = auto_exposure(image, self.sensor, policy)
            self.assertLessEqual(exposure, MAX_EXPOSURE_S)
            if exposure >= MAX_EXPOSURE_S:
                continue
            rows, cols = central_window((12, 12), policy.central_fraction)
            peak = expected_voltage(image, self.sensor, exposure)[rows, cols].max()
            self.assertGreaterEqual(peak / self.sensor.voltage_swing, 0.899)
            self.assertLessEqual(peak / self.sensor.voltage_swing, 0.901)
            checked += 1
        self.assertEqual(checked, 100)

    def test_dim_night_scene_uses_maximum(self):
        """Ambient-only scenes at or below 1 lux saturate the exposure cap"""
        supersample = auto_supersample(1.4, 2.4)
        lamp = blackbody_spd(WAVELENGTHS, 3000.0).power
        for lux in (1.0, 0.3, 0.1):
            scene = SpectralImage(lamp[:, None, None] * np.full((1, 8 * supersample, 8 * supersample), 0.2),
                                  400.0, 30.0, self.sensor.pixel_pitch_mm / supersample, RADIANCE)
            irradiance = apply_optics(scale_to_illuminance(scene, lux), OpticsConfig(f_number=2.4)).irradiance
            self.assertEqual(auto_exposure(irradiance, self.sensor), MAX_EXPOSURE_S)

    def test_window_override(self):
        values = np.zeros((WAVELENGTHS.size, 6, 6))
        values[:, 0, 0] = 1.0
        image = irradiance_image(values, self.sensor)
        self.assertEqual(auto_exposure(image, self.sensor), MAX_EXPOSURE_S)
        self.assertLess(auto_exposure(image, self.sensor, window=(slice(0, 2), slice(0, 2))), MAX_EXPOSURE_S)


class TestCapture(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(21)
        self.sensor = SensorConfig()
        self.image = irradiance_image(rng.uniform(0.0, 5e-4, size=(WAVELENGTHS.size, 16, 16)), self.sensor)

    def test_dark_floor(self):
        """No light, no dark current and no read noise gives the black level everywhere"""
        sensor = SensorConfig(dark_current=0.0, read_noise=0.0)
        dark = irradiance_image(np.zeros((WAVELENGTHS.size, 4, 4)), sensor)
        raw = capture(dark, sensor, 0.01, seed=3)
        self.assertTrue(np.all(raw.dn == sensor.black_level))
        self.assertEqual(raw.saturated_fraction, 0.0)

    def test_noise_free_quantization(self):
        raw = capture(self.image, self.sensor, 0.005, seed=0, noise=False)
        voltage = np.minimum(expected_voltage(self.image, self.sensor, 0.005), self.sensor.voltage_swing)
        span = self.sensor.full_scale - self.sensor.black_level
        expected = np.clip(np.round(self.sensor.black_level + voltage / self.sensor.voltage_swing * span),
                           0, self.sensor.full_scale)
        np.testing.assert_array_equal(raw.dn, expected.astype(np.uint16))

    def test_deterministic_across_workers(self):
        """Same seed gives byte-identical frames for 1, 2 and 8 workers"""
        frames = [capture(self.image, self.sensor, 0.005, seed=99, workers=w).dn.tobytes() for w in (1, 2, 8)]
        self.assertEqual(frames[0], frames[1])
        self.assertEqual(frames[0], frames[2])
        other = capture(self.image, self.sensor, 0.005, seed=100).dn.tobytes()
        self.assertNotEqual(frames[0], other)

    def test_saturation(self):
        sensor = SensorConfig(read_noise=0.0)
        raw = capture(irradiance_image(np.full((WAVELENGTHS.size, 4, 4), 10.0), sensor),
                      sensor, MAX_EXPOSURE_S, seed=1)
        self.assertEqual(raw.saturated_fraction, 1.0)
        self.assertTrue(np.all(raw.dn == sensor.full_scale))

    def test_sidecar(self):
        raw = capture(self.image, self.sensor, 0.004, seed=0, origin=(2, 4))
        sidecar = raw.sidecar()
        self.assertEqual(sidecar["cfa"], "RGGB")
        self.assertEqual(sidecar["origin"], [2, 4])
        self.assertEqual(sidecar["exposure_time_s"], 0.004)


class TestShotNoise(unittest.TestCase):

    def setUp(self):
        self.sensor = SensorConfig(read_noise=0.0, dark_current=0.0)

    def test_photon_transfer(self):
        """Electron-count variance over mean stays within 5% of one"""
        for mean in (100.0, 1000.0, 5000.0):
            counts = sample_electrons(np.full((200, 200), mean), self.sensor, seed=7)
            ratio = counts.var(ddof=1) / counts.mean()
            self.assertGreaterEqual(ratio, 0.95)
            self.assertLessEqual(ratio, 1.05)

    def test_sample_mean(self):
        counts = sample_electrons(np.full((100, 100), 1000.0), self.sensor, seed=12)
        self.assertLess(abs(counts.mean() - 1000.0), 3.0 * np.sqrt(1000.0 / 1e4))

    def test_gaussian_branch(self):
        counts = sample_electrons(np.full((100, 100), 5e4), self.sensor, seed=5)
        self.assertLess(abs(counts.mean() - 5e4), 3.0 * np.sqrt(5e4 / 1e4))
        self.assertTrue(np.all(counts == np.round(counts)))


if __name__ == '__main__':
    unittest.main()

"""
Unit tests for settings, camera models and experiment configuration
"""
import json
import os
import sys
import tempfile
import unittest
from unittest.mock import patch

import pydantic
import yaml

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.config import (CameraConfig, ExperimentConfig, Settings, camera_id, default_camera_grid,
                          load_experiment_config)
from utils.error_handler import ConfigurationError


class TestSettings(unittest.TestCase):

    @patch.dict(os.environ, {"LOG_LEVEL": "debug", "CAMTWIN_WORKERS": "4", "CAMTWIN_OUTPUT_DIR": "/tmp/out",
                             "CAMTWIN_LOG_DIR": "/tmp/logs"})
    def test_from_env(self):
        settings = Settings.from_env(env_file=os.devnull)
        self.assertEqual(settings.log_level, "DEBUG")
        self.assertEqual(settings.workers, 4)
        self.assertEqual(settings.output_dir, "/tmp/out")
        self.assertEqual(settings.log_dir, "/tmp/logs")

    @patch.dict(os.environ, {"CAMTWIN_WORKERS": "0"})
    def test_invalid_workers(self):
        with self.assertRaises(pydantic.ValidationError):
            Settings.from_env(env_file=os.devnull)


class TestCameraConfig(unittest.TestCase):

    def test_camera_id(self):
        self.assertEqual(camera_id(1.4, 2.4), "p1.4_f2.4")
        self.assertEqual(camera_id(2, 4), "p2.0_f4.0")

    def test_build(self):
        camera = CameraConfig.build(2.0, 4.0, read_noise=1.0)
        self.assertEqual(camera.id, "p2.0_f4.0")
        self.assertEqual(camera.optics.f_number, 4.0)
        self.assertEqual(camera.sensor.pixel_size_um, 2.0)
        self.assertEqual(camera.sensor.read_noise, 1.0)

    def test_default_grid(self):
        grid = default_camera_grid()
        ids = [c.id for c in grid]
        self.assertEqual(len(grid), 13)
        self.assertEqual(len(set(ids)), 13)
        self.assertIn("p1.4_f2.4", ids)
        self.assertEqual({c.sensor.pixel_size_um for c in grid}, {1.0, 1.4, 2.0, 2.8})
        self.assertEqual({c.optics.f_number for c in grid}, {1.8, 2.4, 4.0, 5.6})


class TestExperimentConfig(unittest.TestCase):

    def test_defaults_use_camera_grid(self):
        config = ExperimentConfig()
        self.assertEqual(len(config.cameras), 13)
        self.assertEqual(config.effective_conditions, ["day", "night"])
        self.assertTrue(config.uses_baseline)

    def test_lux_sweep_replaces_conditions(self):
        config = ExperimentConfig(lux_levels=[0.5, 10, 1000])
        self.assertEqual(config.effective_conditions, ["lux:0.5", "lux:10", "lux:1000"])

    def test_rejected_values(self):
        for fields in ({"bootstrap": 1}, {"conditions": ["noon"]}, {"conditions": ["day", "day"]},
                       {"lux_levels": [0.0]}, {"spm_levels": [1.0]}, {"distances_m": [50.0, 25.0]},
                       {"distances_m": [25.0]}, {"mtf_mode": "knife"}, {"unknown": 1},
                       {"cameras": [CameraConfig.build(1.4, 2.4).model_dump()] * 2}):
            with self.assertRaises(pydantic.ValidationError, msg=str(fields)):
                ExperimentConfig(**fields)

    def test_config_hash_ignores_workers_and_output(self):
        base = ExperimentConfig(seed=3)
        self.assertEqual(base.config_hash(), ExperimentConfig(seed=3, workers=8, output_dir="elsewhere").config_hash())
        self.assertNotEqual(base.config_hash(), ExperimentConfig(seed=4).config_hash())

    def test_camera_lookup(self):
        config = ExperimentConfig()
        self.assertEqual(config.camera("p1.4_f2.4").optics.f_number, 2.4)
        with self.assertRaises(ConfigurationError):
            config.camera("p9.9_f9.9")


class TestLoadExperimentConfig(unittest.TestCase):

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def write(self, name, text):
        path = os.path.join(self.temp_dir, name)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
        return path

    def test_json_and_yaml(self):
        payload = {"collection": "c", "seed": 5, "scenes_per_distance": 2, "conditions": ["day"]}
        from_json = load_experiment_config(self.write("exp.json", json.dumps(payload)))
        from_yaml = load_experiment_config(self.write("exp.yaml", yaml.safe_dump(payload)))
        self.assertEqual(from_json, from_yaml)
        self.assertEqual(from_json.scenes_per_distance, 2)

    def test_overrides(self):
        path = self.write("exp.json", json.dumps({"seed": 5}))
        config = load_experiment_config(path, workers=3, output_dir=None)
        self.assertEqual(config.workers, 3)
        self.assertEqual(config.output_dir, "results")

    def test_missing_and_malformed(self):
        with self.assertRaises(ConfigurationError):
            load_experiment_config(os.path.join(self.temp_dir, "missing.json"))
        with self.assertRaises(ConfigurationError):
            load_experiment_config(self.write("bad.json", "{"))
        with self.assertRaises(ConfigurationError):
            load_experiment_config(self.write("list.json", "[1, 2]"))

    def test_external_detector_directory_must_exist(self):
        path = self.write("exp.json", json.dumps({"detector": os.path.join(self.temp_dir, "nope")}))
        with self.assertRaises(ConfigurationError):
            load_experiment_config(path)

    def test_focal_length_mismatch(self):
        camera = CameraConfig.build(1.4, 2.4, focal_length_mm=4.0).model_dump()
        path = self.write("exp.json", json.dumps({"cameras": [camera]}))
        with self.assertRaises(ConfigurationError):
            load_experiment_config(path)


if __name__ == '__main__':
    unittest.main()

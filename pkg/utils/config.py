"""
Configuration: environment settings, camera and experiment models, default camera grid
"""
import json
import logging
import os
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from engines.optics import OpticsConfig
from engines.sensor import ExposurePolicy, SensorConfig
from generators.scene_generator import STANDARD_DISTANCES_M, parse_illumination
from services.detector_service import DetectorParams
from utils.error_handler import ConfigurationError, DomainError
from utils.integrity import ContentHasher

logger = logging.getLogger(__name__)

BASELINE_DETECTOR = "baseline"

GRID_PIXEL_SIZES_UM = (1.0, 1.4, 2.0, 2.8)
GRID_F_NUMBERS = (1.8, 2.4, 4.0, 5.6)
# Dropped corners keep 13 systems while two pairs share an MTF50:
# (1.4 um, f/4.0) ~ (2.0 um, f/1.8) and (1.0 um, f/5.6) ~ (2.0 um, f/2.4).
GRID_EXCLUDED = {(1.0, 1.8), (2.8, 2.4), (2.8, 4.0)}
ANCHOR_CAMERA = (1.4, 2.4)


class Settings(BaseModel):
    """Process-level settings from the environment (and a .env file)"""
    log_level: str = "INFO"
    log_dir: str = "logs"
    workers: int = Field(1, ge=1)
    output_dir: str = "results"

    @classmethod
    def from_env(cls, env_file: Optional[str] = None) -> "Settings":
        load_dotenv(env_file, override=False)
        return cls(
            log_level=os.getenv("LOG_LEVEL", "INFO").upper(),
            log_dir=os.getenv("CAMTWIN_LOG_DIR", "logs"),
            workers=int(os.getenv("CAMTWIN_WORKERS", "1")),
            output_dir=os.getenv("CAMTWIN_OUTPUT_DIR", "results"),
        )


def camera_id(pixel_size_um: float, f_number: float) -> str:
    return f"p{pixel_size_um:.1f}_f{f_number:.1f}"


class CameraConfig(BaseModel):
    """One simulated imaging system"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str = Field(min_length=1)
    optics: OpticsConfig = OpticsConfig()
    sensor: SensorConfig = SensorConfig()
    policy: ExposurePolicy = ExposurePolicy()

    @classmethod
    def build(cls, pixel_size_um: float, f_number: float, focal_length_mm: float = 6.0, **sensor_fields) -> "CameraConfig":
        return cls(
            id=camera_id(pixel_size_um, f_number),
            optics=OpticsConfig(f_number=f_number, focal_length_mm=focal_length_mm),
            sensor=SensorConfig(pixel_size_um=pixel_size_um, **sensor_fields),
        )


def default_camera_grid(focal_length_mm: float = 6.0) -> List[CameraConfig]:
    """Thirteen (pixel size, f-number) systems on the IMX363-like die, anchor included"""
    return [
        CameraConfig.build(pixel, f_number, focal_length_mm)
        for pixel in GRID_PIXEL_SIZES_UM
        for f_number in GRID_F_NUMBERS
        if (pixel, f_number) not in GRID_EXCLUDED
    ]


class ExperimentConfig(BaseModel):
    """One reproducible experiment; the validated dump is what the config hash covers"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    collection: str = "metric"
    collection_seed: Optional[int] = Field(None, ge=0)
    cameras: List[CameraConfig] = Field(default_factory=list)
    conditions: List[str] = Field(default_factory=lambda: ["day", "night"])
    lux_levels: Optional[List[float]] = None
    detector: str = BASELINE_DETECTOR
    detector_params: DetectorParams = DetectorParams()
    bootstrap: int = Field(0, ge=0)
    output_dir: str = "results"
    seed: int = Field(0, ge=0)
    scenes_per_distance: int = Field(10, ge=1)
    distances_m: List[float] = Field(default_factory=lambda: list(STANDARD_DISTANCES_M))
    workers: int = Field(1, ge=1)
    wave_step_nm: float = Field(30.0, gt=0)
    focal_length_mm: float = Field(6.0, gt=0)
    gamma: float = Field(2.2, gt=0)
    spm_levels: List[float] = Field(default_factory=lambda: [0.3, 0.5, 0.7])
    spm_resolution: int = Field(64, ge=2)
    svg_width: int = Field(640, ge=100)
    svg_height: int = Field(480, ge=100)
    anchor_camera: str = camera_id(*ANCHOR_CAMERA)
    mtf_mode: Literal["slanted_edge", "analytic"] = "slanted_edge"
    mtf_channel: Literal["luma", "green", "raw"] = "luma"
    save_images: bool = False

    @model_validator(mode="before")
    @classmethod
    def _default_grid(cls, data):
        if isinstance(data, dict) and not data.get("cameras"):
            focal = data.get("focal_length_mm", 6.0)
            data = {**data, "cameras": [c.model_dump() for c in default_camera_grid(float(focal))]}
        return data

    @field_validator("conditions")
    @classmethod
    def _known_conditions(cls, value: List[str]) -> List[str]:
        for condition in value:
            try:
                parse_illumination(condition)
            except DomainError as e:
                raise ValueError(e.message)
        if len(set(value)) != len(value):
            raise ValueError("Conditions must be distinct")
        return value

    @field_validator("lux_levels")
    @classmethod
    def _positive_levels(cls, value):
        if value is not None and (not value or any(v <= 0 for v in value) or len(set(value)) != len(value)):
            raise ValueError("lux_levels must be distinct positive values")
        return value

    @field_validator("spm_levels")
    @classmethod
    def _levels_inside_unit_interval(cls, value: List[float]) -> List[float]:
        if any(not 0 < v < 1 for v in value):
            raise ValueError("SPM contour levels must lie in (0, 1)")
        return value

    @field_validator("distances_m")
    @classmethod
    def _distances(cls, value: List[float]) -> List[float]:
        if len(value) < 2 or any(d <= 0 for d in value) or sorted(set(value)) != list(value):
            raise ValueError("distances_m must hold at least two increasing positive distances")
        return value

    @model_validator(mode="after")
    def _check_cameras(self):
        ids = [c.id for c in self.cameras]
        if not ids:
            raise ValueError("At least one camera is required")
        if len(set(ids)) != len(ids):
            raise ValueError("Camera ids must be unique")
        if self.bootstrap == 1:
            raise ValueError("bootstrap must be 0 (off) or at least 2")
        return self

    @property
    def effective_conditions(self) -> List[str]:
        """Conditions actually run; a lux sweep replaces the named conditions"""
        if self.lux_levels:
            return [f"lux:{level:g}" for level in self.lux_levels]
        return list(self.conditions)

    @property
    def uses_baseline(self) -> bool:
        return self.detector == BASELINE_DETECTOR

    def camera(self, camera_id_: str) -> CameraConfig:
        for camera in self.cameras:
            if camera.id == camera_id_:
                return camera
        raise ConfigurationError(f"Unknown camera '{camera_id_}'")

    def result_payload(self) -> dict:
        """Fields that determine results; worker count and output location are excluded"""
        return self.model_dump(mode="json", exclude={"workers", "output_dir"})

    def config_hash(self) -> str:
        return ContentHasher.payload_hash(self.result_payload())


def load_experiment_config(path: Union[str, Path], **overrides) -> ExperimentConfig:
    """Parse a JSON or YAML experiment file; field errors surface as pydantic validation errors"""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}", details={"path": str(path)})
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            payload = yaml.safe_load(text)
        else:
            payload = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Cannot parse config {path}: {e}", details={"path": str(path)})
    if not isinstance(payload, dict):
        raise ConfigurationError(f"Config {path} must hold a mapping at top level")

    payload.update({k: v for k, v in overrides.items() if v is not None})
    config = ExperimentConfig.model_validate(payload)

    if config.anchor_camera not in {c.id for c in config.cameras}:
        logger.info(f"Anchor camera '{config.anchor_camera}' is not in the camera list")
    if not config.uses_baseline and not Path(config.detector).is_dir():
        raise ConfigurationError(f"External detection directory not found: {config.detector}")
    focal = {c.optics.focal_length_mm for c in config.cameras}
    if focal != {config.focal_length_mm}:
        raise ConfigurationError(
            f"Camera focal lengths {sorted(focal)} differ from the experiment focal length {config.focal_length_mm}"
        )
    return config

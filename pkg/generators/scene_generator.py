"""
Scene Generator for the metric-scene collection: one car on a straight road,
rendered as analytic planar patches with exact ground-truth boxes.

Sensor-plane coordinates are in mm relative to the principal point at the die
center, x to the right and y downward. The camera sits camera_height_m above a
flat road, so the horizon projects onto the principal row.
"""
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from engines.optics import cutoff_frequency
from engines.spectral import (RADIANCE, SPD, SpectralImage, blackbody_spd, d65_spd,
                              scale_to_illuminance)
from utils.error_handler import DomainError, FieldOfViewError
from utils.integrity import validate_output_dir
from utils.monitoring import performance_monitor, twin_logger

logger = logging.getLogger(__name__)

STANDARD_DISTANCES_M = (25.0, 50.0, 75.0, 100.0, 150.0, 200.0)
STANDARD_SCENES_PER_DISTANCE = 50
MAX_LATERAL_OFFSET_M = 1.5

ILLUMINATION_RANGES = {"day": (10.0, 200.0), "night": (0.1, 1.0), "dusk": (1.0, 10.0)}
HEADLIGHT_KINDS = ("night", "dusk")
_KIND_CODES = {"day": 1, "night": 2, "dusk": 3, "lux": 4}
_ILLUMINATION_PATTERN = re.compile(r"^(day|night|dusk|lux:(?P<lux>[0-9]*\.?[0-9]+([eE][-+]?[0-9]+)?))$")

GT_PIXEL_RULE = "pixel = mm / pitch + resolution / 2; top-left floored, bottom-right ceiled"

SKY, ROAD, CAR = 0, 1, 2


@dataclass(frozen=True)
class CarVariant:
    name: str
    width_m: float
    height_m: float
    gray: Optional[float] = None
    band: Optional[Tuple[float, float, float, float]] = None  # (lo nm, hi nm, in-band, out-of-band)

    def reflectance(self, wavelengths_nm: np.ndarray) -> np.ndarray:
        wl = np.asarray(wavelengths_nm, dtype=np.float64)
        if self.gray is not None:
            return np.full(wl.shape, self.gray)
        lo, hi, inside, outside = self.band
        return np.where((wl >= lo) & (wl <= hi), inside, outside)


# Synthetic variant table: eight neutral bodies and two dark chromatic ones.
CAR_VARIANTS = (
    CarVariant("gray08", 1.80, 1.45, gray=0.08),
    CarVariant("gray09", 1.70, 1.50, gray=0.09),
    CarVariant("gray10", 1.90, 1.40, gray=0.10),
    CarVariant("gray12", 1.65, 1.35, gray=0.12),
    CarVariant("gray40", 1.75, 1.55, gray=0.40),
    CarVariant("gray45", 2.00, 1.60, gray=0.45),
    CarVariant("gray48", 1.60, 1.30, gray=0.48),
    CarVariant("gray50", 1.85, 1.50, gray=0.50),
    CarVariant("dark_red", 1.80, 1.45, band=(600.0, 1000.0, 0.30, 0.03)),
    CarVariant("dark_blue", 1.95, 1.55, band=(0.0, 490.0, 0.25, 0.03)),
)


def parse_illumination(illumination: str) -> Tuple[str, Optional[float]]:
    """'day' -> ('day', None); 'lux:12.5' -> ('lux', 12.5)"""
    match = _ILLUMINATION_PATTERN.match(illumination or "")
    if not match:
        raise DomainError(f"Unknown illumination '{illumination}'")
    if match.group("lux") is not None:
        value = float(match.group("lux"))
        if value <= 0:
            raise DomainError(f"Explicit illuminance must be positive, got {value}")
        return "lux", value
    return illumination, None


def draw_target_lux(illumination: str, seed: int) -> float:
    """Per-scene uniform draw from the illumination kind's lux range"""
    kind, value = parse_illumination(illumination)
    if value is not None:
        return value
    lo, hi = ILLUMINATION_RANGES[kind]
    rng = np.random.default_rng([seed, _KIND_CODES[kind]])
    return float(rng.uniform(lo, hi))


class SceneSpec(BaseModel):
    """One metric scene"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    scene_id: str
    distance_m: float = Field(gt=0)
    illumination: str = "day"
    target_lux: Optional[float] = Field(None, gt=0)
    car_index: int = Field(0, ge=0, lt=len(CAR_VARIANTS))
    lateral_offset_m: float = 0.0
    seed: int = Field(0, ge=0)

    @field_validator("illumination")
    @classmethod
    def _known_illumination(cls, value: str) -> str:
        try:
            parse_illumination(value)
        except DomainError as e:
            raise ValueError(e.message)
        return value

    @model_validator(mode="before")
    @classmethod
    def _fill_target(cls, data):
        if isinstance(data, dict) and data.get("target_lux") is None:
            try:
                lux = draw_target_lux(data.get("illumination", "day"), int(data.get("seed", 0)))
            except (DomainError, TypeError, ValueError):
                return data
            data = {**data, "target_lux": lux}
        return data

    @property
    def kind(self) -> str:
        return parse_illumination(self.illumination)[0]

    @property
    def headlights(self) -> bool:
        return self.kind in HEADLIGHT_KINDS

    @property
    def car(self) -> CarVariant:
        return CAR_VARIANTS[self.car_index]


class RenderConfig(BaseModel):
    """Camera-independent field of view plus the sampling of the rendered grid"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    focal_length_mm: float = Field(6.0, gt=0)
    die_width_mm: float = Field(5.64, gt=0)
    die_height_mm: float = Field(4.23, gt=0)
    pixel_size_um: float = Field(1.4, gt=0)
    supersample: int = Field(8, ge=1)
    wave_start_nm: float = 400.0
    wave_end_nm: float = 700.0
    wave_step_nm: float = Field(10.0, gt=0)
    mode: Literal["window", "full"] = "window"
    window_width_factor: float = Field(3.0, ge=1)
    window_height_factor: float = Field(1.5, ge=1)
    min_window_px: int = Field(16, ge=2)
    camera_height_m: float = Field(1.2, gt=0)
    road_reflectance: float = Field(0.2, ge=0, le=1)
    sky_reflectance: float = Field(0.9, ge=0, le=1)
    night_temperature_k: float = Field(3000.0, gt=0)
    headlight_temperature_k: float = Field(3200.0, gt=0)
    headlight_luminance: float = Field(2e4, gt=0)
    headlight_size_m: float = Field(0.15, gt=0)
    headlight_height_m: float = Field(0.65, gt=0)
    headlight_inset_m: float = Field(0.2, ge=0)

    @model_validator(mode="after")
    def _check_wave_grid(self):
        span = (self.wave_end_nm - self.wave_start_nm) / self.wave_step_nm
        if span < 0 or abs(span - round(span)) > 1e-9:
            raise ValueError("wave_end_nm - wave_start_nm must be a nonnegative multiple of wave_step_nm")
        return self

    @property
    def n_wave(self) -> int:
        return int(round((self.wave_end_nm - self.wave_start_nm) / self.wave_step_nm)) + 1

    @property
    def wavelengths(self) -> np.ndarray:
        return self.wave_start_nm + self.wave_step_nm * np.arange(self.n_wave)

    @property
    def pixel_pitch_mm(self) -> float:
        return self.pixel_size_um * 1e-3

    @property
    def sample_pitch_mm(self) -> float:
        return self.pixel_pitch_mm / self.supersample

    @property
    def resolution(self) -> Tuple[int, int]:
        rows = int(math.floor(self.die_height_mm / self.pixel_pitch_mm + 1e-9))
        cols = int(math.floor(self.die_width_mm / self.pixel_pitch_mm + 1e-9))
        return rows, cols


def auto_supersample(pixel_size_um: float, f_number: float, min_wavelength_nm: float = 400.0) -> int:
    """Smallest integer factor whose grid Nyquist reaches the diffraction cutoff"""
    pitch_mm = pixel_size_um * 1e-3
    fc = float(cutoff_frequency(min_wavelength_nm, f_number))
    return max(1, int(math.ceil(2.0 * pitch_mm * fc - 1e-9)))


@dataclass(frozen=True)
class GroundTruthBox:
    """Car box in full-frame pixels (top-left origin) and in sensor-plane mm"""
    x: int
    y: int
    w: int
    h: int
    x_mm: float
    y_mm: float
    w_mm: float
    h_mm: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise DomainError(f"Ground-truth box must have positive size, got {self.w}x{self.h}")

    @property
    def xywh(self) -> List[float]:
        return [float(self.x), float(self.y), float(self.w), float(self.h)]

    @property
    def mm(self) -> Tuple[float, float, float, float]:
        return (self.x_mm, self.y_mm, self.w_mm, self.h_mm)

    @classmethod
    def from_mm(cls, box_mm, pixel_size_um: float, resolution: Tuple[int, int]) -> "GroundTruthBox":
        """Outward-rounded pixel box; raises when it leaves the sensor"""
        x_mm, y_mm, w_mm, h_mm = (float(v) for v in box_mm)
        rows, cols = resolution
        pitch = pixel_size_um * 1e-3
        left = math.floor(x_mm / pitch + cols / 2.0 + 1e-9)
        top = math.floor(y_mm / pitch + rows / 2.0 + 1e-9)
        right = math.ceil((x_mm + w_mm) / pitch + cols / 2.0 - 1e-9)
        bottom = math.ceil((y_mm + h_mm) / pitch + rows / 2.0 - 1e-9)
        if left < 0 or top < 0 or right > cols or bottom > rows:
            raise FieldOfViewError(
                f"Projected box [{left}, {top}, {right}, {bottom}] leaves the {cols}x{rows} sensor",
                details={"box_mm": [x_mm, y_mm, w_mm, h_mm]},
            )
        return cls(left, top, right - left, bottom - top, x_mm, y_mm, w_mm, h_mm)


def project_extent(size_m: float, distance_m: float, focal_length_mm: float) -> float:
    """Pinhole image size (mm) of an object of size_m at distance_m"""
    if distance_m <= 0:
        raise DomainError(f"Distance must be positive, got {distance_m}")
    if focal_length_mm <= 0:
        raise DomainError(f"Focal length must be positive, got {focal_length_mm}")
    return size_m * focal_length_mm / distance_m


def car_box_mm(spec: SceneSpec, focal_length_mm: float, camera_height_m: float = 1.2) -> Tuple[float, float, float, float]:
    """(x, y, w, h) of the projected car rectangle in sensor-plane mm"""
    car = spec.car
    width = project_extent(car.width_m, spec.distance_m, focal_length_mm)
    height = project_extent(car.height_m, spec.distance_m, focal_length_mm)
    left = project_extent(spec.lateral_offset_m - car.width_m / 2.0, spec.distance_m, focal_length_mm)
    top = project_extent(camera_height_m - car.height_m, spec.distance_m, focal_length_mm)
    return (left, top, width, height)


def ground_truth_bbox(spec: SceneSpec, focal_length_mm: float, pixel_size_um: float,
                      resolution: Tuple[int, int], camera_height_m: float = 1.2) -> GroundTruthBox:
    """Projected car rectangle converted to whole pixels, rounded outward"""
    return GroundTruthBox.from_mm(car_box_mm(spec, focal_length_mm, camera_height_m), pixel_size_um, resolution)


def render_window(box: GroundTruthBox, config: RenderConfig) -> Tuple[int, int, int, int]:
    """(row0, col0, rows, cols) of the crop around the car; even origin keeps the CFA phase"""
    rows, cols = config.resolution
    if config.mode == "full":
        return 0, 0, rows, cols
    pitch = config.pixel_pitch_mm

    def span(size_mm, factor, limit):
        n = max(config.min_window_px, int(math.ceil(factor * size_mm / pitch)))
        n += n % 2
        return min(n, limit - limit % 2)

    win_w = span(box.w_mm, config.window_width_factor, cols)
    win_h = span(box.h_mm, config.window_height_factor, rows)
    center_col = (box.x_mm + box.w_mm / 2.0) / pitch + cols / 2.0
    center_row = (box.y_mm + box.h_mm / 2.0) / pitch + rows / 2.0

    def origin(center, size, limit):
        start = int(math.floor(center - size / 2.0))
        start -= start % 2
        return int(min(max(start, 0), (limit - size) - (limit - size) % 2))

    return origin(center_row, win_h, rows), origin(center_col, win_w, cols), win_h, win_w


@dataclass(frozen=True, eq=False)
class RenderedScene:
    radiance: SpectralImage
    gt: GroundTruthBox
    origin: Tuple[int, int]            # (row, col) of the crop on the full sensor
    field_center_mm: Tuple[float, float]
    headlight_mask: Optional[np.ndarray] = None


def ambient_spd(kind: str, config: RenderConfig) -> SPD:
    wl = config.wavelengths
    if kind == "night":
        return blackbody_spd(wl, config.night_temperature_k)
    return d65_spd(wl)


def _sample_coordinates(config: RenderConfig, row0: int, col0: int, win_h: int, win_w: int):
    rows, cols = config.resolution
    s = config.supersample
    pitch = config.pixel_pitch_mm
    x_mm = (col0 + (np.arange(win_w * s) + 0.5) / s - cols / 2.0) * pitch
    y_mm = (row0 + (np.arange(win_h * s) + 0.5) / s - rows / 2.0) * pitch
    return x_mm, y_mm


def _rect_mask(x_mm, y_mm, left, top, width, height) -> np.ndarray:
    inside_x = (x_mm >= left) & (x_mm < left + width)
    inside_y = (y_mm >= top) & (y_mm < top + height)
    return inside_y[:, None] & inside_x[None, :]


def _headlight_mask(spec: SceneSpec, config: RenderConfig, x_mm, y_mm) -> np.ndarray:
    car = spec.car
    f, d = config.focal_length_mm, spec.distance_m
    size = project_extent(config.headlight_size_m, d, f)
    top = project_extent(config.camera_height_m - config.headlight_height_m - config.headlight_size_m / 2.0, d, f)
    left_edge = spec.lateral_offset_m - car.width_m / 2.0 + config.headlight_inset_m
    right_edge = spec.lateral_offset_m + car.width_m / 2.0 - config.headlight_inset_m - config.headlight_size_m
    mask = np.zeros((y_mm.size, x_mm.size), dtype=bool)
    for edge in (left_edge, right_edge):
        mask |= _rect_mask(x_mm, y_mm, project_extent(edge, d, f), top, size, size)
    return mask


@performance_monitor("generate_scene")
def generate_scene(spec: SceneSpec, config: RenderConfig = None) -> RenderedScene:
    """Render one scene's spectral radiance and its ground-truth box; pure in (spec, config)"""
    config = config or RenderConfig()
    rows, cols = config.resolution
    box = ground_truth_bbox(spec, config.focal_length_mm, config.pixel_size_um, (rows, cols),
                            config.camera_height_m)
    row0, col0, win_h, win_w = render_window(box, config)
    x_mm, y_mm = _sample_coordinates(config, row0, col0, win_h, win_w)

    labels = np.where(y_mm < 0, SKY, ROAD)[:, None].repeat(x_mm.size, axis=1)
    labels[_rect_mask(x_mm, y_mm, *box.mm)] = CAR

    wl = config.wavelengths
    reflectance = np.stack([
        np.full(wl.shape, config.sky_reflectance),
        np.full(wl.shape, config.road_reflectance),
        spec.car.reflectance(wl),
    ], axis=1)
    ambient = ambient_spd(spec.kind, config).power
    values = (reflectance * ambient[:, None])[:, labels]
    scene = SpectralImage(values, config.wave_start_nm, config.wave_step_nm, config.sample_pitch_mm, RADIANCE)

    mask = _headlight_mask(spec, config, x_mm, y_mm) if spec.headlights else None
    scene = scale_to_illuminance(scene, spec.target_lux, exclude=mask)
    if mask is not None and mask.any():
        lamp = blackbody_spd(wl, config.headlight_temperature_k).scaled_to_luminance(config.headlight_luminance)
        painted = scene.values.copy()
        painted[:, mask] = lamp.power[:, None]
        scene = scene.with_values(painted)

    field_center = ((col0 + win_w / 2.0 - cols / 2.0) * config.pixel_pitch_mm,
                    (row0 + win_h / 2.0 - rows / 2.0) * config.pixel_pitch_mm)
    twin_logger.log_stage("scene_rendered", {
        "scene_id": spec.scene_id, "illumination": spec.illumination, "target_lux": spec.target_lux,
        "window": [row0, col0, win_h, win_w], "supersample": config.supersample,
    })
    return RenderedScene(scene, box, (row0, col0), field_center, mask)


@performance_monitor("generate_slanted_edge")
def generate_slanted_edge(config: RenderConfig = None, size_px: int = 64, angle_deg: float = 5.0,
                          bright: float = 0.9, dark: float = 0.05, lux: float = 100.0) -> SpectralImage:
    """Bright-left, dark-right edge tilted angle_deg from vertical through the frame center"""
    config = config or RenderConfig()
    s = config.supersample
    n = size_px * s
    coords = (np.arange(n) + 0.5) / s
    center = size_px / 2.0
    edge_col = center + (coords - center) * math.tan(math.radians(angle_deg))
    is_bright = coords[None, :] < edge_col[:, None]

    wl = config.wavelengths
    illuminant = d65_spd(wl).power
    table = np.stack([dark * illuminant, bright * illuminant], axis=1)
    values = table[:, is_bright.astype(np.intp)]
    scene = SpectralImage(values, config.wave_start_nm, config.wave_step_nm, config.sample_pitch_mm, RADIANCE)
    return scale_to_illuminance(scene, lux)


class ManifestScene(SceneSpec):
    """Manifest row: the scene plus where its reference render lives"""
    sif_path: Optional[str] = None
    gt_box_mm: Tuple[float, float, float, float]


class SceneManifest(BaseModel):
    """Collection description; pixel boxes follow gt_pixel_rule for any camera"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    collection: str
    seed: int = Field(ge=0)
    focal_length_mm: float = Field(gt=0)
    die_width_mm: float = Field(gt=0)
    die_height_mm: float = Field(gt=0)
    camera_height_m: float = Field(1.2, gt=0)
    reference_pixel_um: float = Field(gt=0)
    gt_pixel_rule: str = GT_PIXEL_RULE
    distances_m: List[float]
    scenes_per_distance: int = Field(ge=1)
    scenes: List[ManifestScene]

    @model_validator(mode="after")
    def _check_scenes(self):
        ids = [scene.scene_id for scene in self.scenes]
        if len(set(ids)) != len(ids):
            raise ValueError("Scene ids must be unique")
        return self

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SceneManifest":
        return cls.model_validate(json.loads(text))

    @property
    def scene_ids(self) -> List[str]:
        return [scene.scene_id for scene in self.scenes]

    def scene(self, scene_id: str) -> ManifestScene:
        for scene in self.scenes:
            if scene.scene_id == scene_id:
                return scene
        raise KeyError(scene_id)

    def scenes_at(self, distance_m: float) -> List[ManifestScene]:
        return [scene for scene in self.scenes if scene.distance_m == distance_m]

    def with_illumination(self, illumination: str, seed: Optional[int] = None) -> "SceneManifest":
        """Same geometry relit; target lux redrawn per scene from its seed (mixed with `seed` if given)"""
        parse_illumination(illumination)
        relit = []
        for scene in self.scenes:
            draw_seed = scene.seed if seed is None else int(np.random.default_rng([seed, scene.seed]).integers(2 ** 63 - 1))
            relit.append(scene.model_copy(update={
                "illumination": illumination,
                "target_lux": draw_target_lux(illumination, draw_seed),
            }))
        return self.model_copy(update={"scenes": relit})


def plan_collection(name: str, seed: int, scenes_per_distance: int = STANDARD_SCENES_PER_DISTANCE,
                    distances_m=STANDARD_DISTANCES_M, illumination: str = "day",
                    config: RenderConfig = None) -> SceneManifest:
    """Draw every scene's car, offset and seed from the collection seed"""
    config = config or RenderConfig()
    rng = np.random.default_rng(seed)
    scenes = []
    for distance in distances_m:
        for i in range(scenes_per_distance):
            car_index = int(rng.integers(len(CAR_VARIANTS)))
            offset = float(rng.uniform(-MAX_LATERAL_OFFSET_M, MAX_LATERAL_OFFSET_M))
            scene_seed = int(rng.integers(2 ** 63 - 1))
            spec = SceneSpec(scene_id=f"{name}_d{int(round(distance)):03d}_{i:03d}", distance_m=float(distance),
                             illumination=illumination, car_index=car_index, lateral_offset_m=offset,
                             seed=scene_seed)
            box_mm = car_box_mm(spec, config.focal_length_mm, config.camera_height_m)
            GroundTruthBox.from_mm(box_mm, config.pixel_size_um, config.resolution)
            scenes.append(ManifestScene(**spec.model_dump(), gt_box_mm=box_mm,
                                        sif_path=f"scenes/{spec.scene_id}.sif"))
    return SceneManifest(
        collection=name, seed=seed, focal_length_mm=config.focal_length_mm,
        die_width_mm=config.die_width_mm, die_height_mm=config.die_height_mm,
        camera_height_m=config.camera_height_m, reference_pixel_um=config.pixel_size_um,
        distances_m=[float(d) for d in distances_m], scenes_per_distance=scenes_per_distance,
        scenes=scenes,
    )


def _render_to_file(args) -> str:
    spec, config, path = args
    from services.file_service import FileService
    FileService().write_spectral_image(generate_scene(spec, config).radiance, path)
    return spec.scene_id


def reference_render_config(manifest: SceneManifest, **overrides) -> RenderConfig:
    """Preview sampling for collection files: reference pixel, no supersampling"""
    settings = dict(focal_length_mm=manifest.focal_length_mm, die_width_mm=manifest.die_width_mm,
                    die_height_mm=manifest.die_height_mm, camera_height_m=manifest.camera_height_m,
                    pixel_size_um=manifest.reference_pixel_um, supersample=1)
    settings.update(overrides)
    return RenderConfig(**settings)


class SceneGenerator:
    """Generate metric-scene collections on disk"""

    def __init__(self, workers: int = 1):
        self.logger = logging.getLogger(__name__)
        self.workers = max(1, int(workers))

    def generate_collection(self, name: str, seed: int, output_dir: Union[str, Path],
                            scenes_per_distance: int = STANDARD_SCENES_PER_DISTANCE,
                            distances_m=STANDARD_DISTANCES_M, illumination: str = "day",
                            config: RenderConfig = None,
                            progress: Optional[Callable[[int, int], None]] = None) -> SceneManifest:
        """Plan, render and write a collection: manifest.json plus scenes/<id>.sif"""
        from services.file_service import FileService

        output = validate_output_dir(output_dir)
        manifest = plan_collection(name, seed, scenes_per_distance, distances_m, illumination, config)
        spectral = {}
        if config is not None:
            spectral = {key: getattr(config, key) for key in ("wave_start_nm", "wave_end_nm", "wave_step_nm")}
        render = reference_render_config(manifest, **spectral)
        (output / "scenes").mkdir(exist_ok=True)
        jobs = [(scene, render, output / scene.sif_path) for scene in manifest.scenes]

        self.logger.info(f"Rendering {len(jobs)} scenes for collection '{name}' with {self.workers} worker(s)")
        if self.workers == 1:
            for done, job in enumerate(jobs, 1):
                _render_to_file(job)
                if progress:
                    progress(done, len(jobs))
        else:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                for done, _ in enumerate(pool.map(_render_to_file, jobs), 1):
                    if progress:
                        progress(done, len(jobs))

        FileService().write_manifest(manifest, output / "manifest.json")
        return manifest


def generate_collection(name: str, seed: int, output_dir: Union[str, Path],
                        scenes_per_distance: int = STANDARD_SCENES_PER_DISTANCE,
                        illumination: str = "day", config: RenderConfig = None,
                        workers: int = 1) -> SceneManifest:
    return SceneGenerator(workers).generate_collection(name, seed, output_dir, scenes_per_distance,
                                                       illumination=illumination, config=config)

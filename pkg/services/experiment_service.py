"""
Experiment orchestration: scene -> optics -> sensor -> ISP -> detection -> metrics -> SPM
as resumable (camera x scene) tasks on a bounded worker pool.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from engines.isp import process
from engines.metrics import (APCurve, OD50Result, bootstrap_od50, curve_from_records, curves_to_frame,
                             match_by_distance, od50, od50_trend, records_to_payload, with_bootstrap,
                             INTERPOLATED)
from engines.mtf import MTF50_COLUMNS, measure_mtf50
from engines.optics import apply_optics
from engines.sensor import auto_exposure, capture, central_window, expected_voltage
from engines.spm import build_grid, contours, emit, od50_marker_points
from generators.scene_generator import (RenderConfig, SceneManifest, auto_supersample, generate_scene,
                                        ground_truth_bbox, plan_collection)
from integrations.detection_io import Detection, DetectionSet, load_detections, save_detections
from services.detector_service import BaselineDetector, DetectorParams
from services.file_service import FileService
from utils.config import CameraConfig, ExperimentConfig
from utils.error_handler import ConfigHashCollisionError, DataError, DegenerateGridError, MetricError, TwinError
from utils.integrity import ContentHasher, validate_output_dir
from utils.monitoring import twin_logger

TASKS_DIR = "tasks"
MTF_TASKS_DIR = "mtf"
RUN_LOG = "run_log.json"


def condition_slug(condition: str) -> str:
    """File-name form of a condition ("lux:10" -> "lux_10")"""
    return condition.replace(":", "_")


@dataclass(frozen=True)
class SceneTask:
    camera: CameraConfig
    scene: object
    render: RenderConfig
    condition: str
    seed: int
    gamma: float
    detector_params: Optional[DetectorParams]
    task_path: str
    image_path: Optional[str]

    def key(self) -> str:
        return ContentHasher.payload_hash({
            "camera": self.camera.model_dump(mode="json"),
            "scene": self.scene.model_dump(mode="json"),
            "render": self.render.model_dump(mode="json"),
            "condition": self.condition,
            "seed": self.seed,
            "gamma": self.gamma,
            "detector": self.detector_params.model_dump(mode="json") if self.detector_params else None,
            "save_image": self.image_path is not None,
        })

    @property
    def raw_path(self) -> Optional[str]:
        """Raw frame saved next to the display image"""
        return str(Path(self.image_path).with_suffix(".pgm")) if self.image_path else None


def camera_render_config(camera: CameraConfig, manifest: SceneManifest, wave_step_nm: float) -> RenderConfig:
    """Crop-window render at the smallest supersampling that resolves the diffraction cutoff"""
    return RenderConfig(
        focal_length_mm=manifest.focal_length_mm,
        die_width_mm=manifest.die_width_mm,
        die_height_mm=manifest.die_height_mm,
        camera_height_m=manifest.camera_height_m,
        pixel_size_um=camera.sensor.pixel_size_um,
        supersample=auto_supersample(camera.sensor.pixel_size_um, camera.optics.f_number),
        wave_step_nm=wave_step_nm,
    )


def exposure_window(resolution: Tuple[int, int], origin: Tuple[int, int], shape: Tuple[int, int],
                    fraction: float) -> Optional[Tuple[slice, slice]]:
    """The full frame's central region expressed in crop coordinates; None if they do not overlap"""
    rows, cols = central_window(resolution, fraction)
    r0, c0 = origin
    h, w = shape
    local_rows = slice(max(rows.start, r0) - r0, min(rows.stop, r0 + h) - r0)
    local_cols = slice(max(cols.start, c0) - c0, min(cols.stop, c0 + w) - c0)
    if local_rows.stop <= local_rows.start or local_cols.stop <= local_cols.start:
        return None
    return local_rows, local_cols


def run_scene_task(task: SceneTask) -> str:
    """One (camera, condition, scene) simulation; the outcome is written to task.task_path"""
    logger = logging.getLogger(__name__)
    files = FileService()
    camera, spec = task.camera, task.scene

    rendered = generate_scene(spec, task.render)
    optics = apply_optics(rendered.radiance, camera.optics, rendered.field_center_mm)
    irradiance = optics.irradiance
    shape = (irradiance.height // task.render.supersample, irradiance.width // task.render.supersample)

    window = exposure_window(task.render.resolution, rendered.origin, shape, camera.policy.central_fraction)
    if window is None:
        logger.warning(f"{spec.scene_id}: crop misses the central region; exposing on the whole crop")
        window = (slice(0, shape[0]), slice(0, shape[1]))
    exposure = auto_exposure(irradiance, camera.sensor, camera.policy, rendered.origin, window)
    peak = float(expected_voltage(irradiance, camera.sensor, exposure, rendered.origin)[window].max())
    clamped = exposure >= camera.policy.max_exposure_s
    twin_logger.log_stage("exposure_chosen", {"camera_id": camera.id, "scene_id": spec.scene_id,
                                              "exposure_time_s": exposure, "clamped": clamped})

    raw = capture(irradiance, camera.sensor, exposure, task.seed, rendered.origin)
    image = process(raw, task.gamma, metadata={"camera_id": camera.id, "scene_id": spec.scene_id})
    twin_logger.log_stage("capture_done", {"camera_id": camera.id, "scene_id": spec.scene_id,
                                           "saturated_fraction": raw.saturated_fraction})

    detections = None
    if task.detector_params is not None:
        detections = [d.to_dict() for d in BaselineDetector(task.detector_params).detect(image, spec.scene_id)]
    if task.image_path:
        files.write_rgb(image, task.image_path)
        files.write_raw(raw, task.raw_path)

    files.write_json({
        "task_key": task.key(),
        "camera_id": camera.id,
        "condition": task.condition,
        "scene_id": spec.scene_id,
        "seed": task.seed,
        "target_lux": spec.target_lux,
        "origin": [int(v) for v in rendered.origin],
        "gt_bbox": rendered.gt.xywh,
        "exposure_time_s": exposure,
        "exposure_clamped": bool(clamped),
        "central_peak_v": peak,
        "saturated_fraction": raw.saturated_fraction,
        "optics_clamped_samples": optics.clamped,
        "detections": detections,
    }, task.task_path)
    return spec.scene_id


def run_mtf_task(args) -> dict:
    camera, mode, channel, path = args
    result = measure_mtf50(camera, mode, channel)
    payload = {"camera": camera.model_dump(mode="json"), **result.to_row()}
    FileService().write_json(payload, path)
    return payload


def mtf50_frame(mtf50s: Dict[str, dict]) -> pd.DataFrame:
    """MTF50 table in a fixed column order, whether rows were measured or read back from task files"""
    return pd.DataFrame([[row[column] for column in MTF50_COLUMNS] for row in mtf50s.values()],
                        columns=list(MTF50_COLUMNS))


@dataclass
class ExperimentResult:
    root: Path
    config_hash: str
    curves: List[APCurve] = field(default_factory=list)
    od50s: Dict[Tuple[str, str], OD50Result] = field(default_factory=dict)
    mtf50s: Dict[str, dict] = field(default_factory=dict)
    spm_files: List[str] = field(default_factory=list)
    files: Dict[str, str] = field(default_factory=dict)


class ExperimentService:
    """Run one ExperimentConfig into <output>/<config-hash-12>/"""

    def __init__(self, config: ExperimentConfig, file_service: Optional[FileService] = None):
        self.logger = logging.getLogger(__name__)
        self.config = config
        self.files = file_service or FileService()
        self.config_hash = config.config_hash()
        self.root = validate_output_dir(config.output_dir) / ContentHasher.short(self.config_hash)
        self.task_seeds: List[dict] = []

    # Bundle setup

    def _claim_root(self):
        """Write config.json, refusing a directory that already holds a different config"""
        payload = self.config.result_payload()
        config_path = self.root / "config.json"
        if config_path.exists():
            existing = self.files.read_json(config_path)
            if existing != payload:
                raise ConfigHashCollisionError(
                    f"{self.root} holds a different config with the same hash prefix",
                    details={"config_hash": self.config_hash},
                )
            self.logger.info(f"Resuming experiment {ContentHasher.short(self.config_hash)}")
        self.root.mkdir(parents=True, exist_ok=True)
        self.files.write_json(payload, config_path)

    def _collection_manifest(self) -> SceneManifest:
        reference = Path(self.config.collection)
        manifest_path = reference / "manifest.json" if reference.is_dir() else reference
        if manifest_path.suffix == ".json" and manifest_path.is_file():
            self.logger.info(f"Using collection manifest {manifest_path}")
            return self.files.read_manifest(manifest_path)
        render = RenderConfig(focal_length_mm=self.config.focal_length_mm,
                              pixel_size_um=self.config.cameras[0].sensor.pixel_size_um)
        return plan_collection(self.config.collection, self.collection_seed, self.config.scenes_per_distance,
                               self.config.distances_m, "day", render)

    @property
    def collection_seed(self) -> int:
        if self.config.collection_seed is not None:
            return self.config.collection_seed
        return ContentHasher.derive_seed(self.config.seed, "collection")

    def condition_manifests(self) -> Dict[str, SceneManifest]:
        base = self._collection_manifest()
        return {condition: base.with_illumination(condition) for condition in self.config.effective_conditions}

    # External detections

    def external_detections(self, manifests: Dict[str, SceneManifest]) -> Dict[Tuple[str, str], DetectionSet]:
        """Load <dir>/<camera>/<condition>.json for every pair and check every manifest image is covered"""
        root = Path(self.config.detector)
        loaded = {}
        for camera in self.config.cameras:
            for condition, manifest in manifests.items():
                path = root / camera.id / f"{condition_slug(condition)}.json"
                if not path.is_file():
                    raise DataError(f"Missing external detections {path}", details={"path": str(path)})
                detections = load_detections(path, manifest)
                missing = sorted(set(manifest.scene_ids) - detections.covered_images())
                if missing:
                    raise DataError(
                        f"External detections {path} do not cover {len(missing)} manifest image(s), "
                        f"first '{missing[0]}'",
                        details={"missing": missing},
                    )
                loaded[(camera.id, condition)] = detections
        return loaded

    # Tasks

    def _tasks(self, manifests: Dict[str, SceneManifest]) -> List[SceneTask]:
        params = self.config.detector_params if self.config.uses_baseline else None
        tasks = []
        for camera in self.config.cameras:
            for condition, manifest in manifests.items():
                render = camera_render_config(camera, manifest, self.config.wave_step_nm)
                slug = condition_slug(condition)
                for scene in manifest.scenes:
                    seed = ContentHasher.derive_seed(self.config.seed, camera.id, condition, scene.scene_id)
                    image_path = None
                    if self.config.save_images:
                        image_path = str(self.root / "images" / camera.id / slug / f"{scene.scene_id}.png")
                    tasks.append(SceneTask(
                        camera, scene, render, condition, seed, self.config.gamma, params,
                        str(self.root / TASKS_DIR / camera.id / slug / f"{scene.scene_id}.json"), image_path,
                    ))
                    self.task_seeds.append({"camera_id": camera.id, "condition": condition,
                                            "scene_id": scene.scene_id, "seed": seed})
        return tasks

    def _is_complete(self, task: SceneTask) -> bool:
        path = Path(task.task_path)
        saved = [task.image_path, task.raw_path] if task.image_path else []
        if not path.is_file() or not all(Path(p).is_file() for p in saved):
            return False
        try:
            return self.files.read_json(path).get("task_key") == task.key()
        except TwinError as e:
            self.logger.warning(f"Recomputing unreadable task file {path}: {e.message}")
            return False

    def run_tasks(self, tasks: Sequence[SceneTask], progress: Optional[Callable[[int, int], None]] = None):
        pending = [task for task in tasks if not self._is_complete(task)]
        skipped = len(tasks) - len(pending)
        self.logger.info(f"{len(pending)} scene task(s) to run, {skipped} already complete, "
                         f"{self.config.workers} worker(s)")
        if self.config.workers == 1:
            for done, task in enumerate(pending, 1):
                run_scene_task(task)
                if progress:
                    progress(done, len(pending))
        else:
            with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
                for done, _ in enumerate(pool.map(run_scene_task, pending), 1):
                    if progress:
                        progress(done, len(pending))

    def measure_cameras(self) -> Dict[str, dict]:
        """MTF50 per camera, cached as tasks/mtf/<camera>.json"""
        jobs, results = [], {}
        for camera in self.config.cameras:
            path = self.root / TASKS_DIR / MTF_TASKS_DIR / f"{camera.id}.json"
            if path.is_file():
                cached = self.files.read_json(path)
                if (cached.get("camera") == camera.model_dump(mode="json")
                        and cached.get("mode") == self.config.mtf_mode
                        and cached.get("channel") == self.config.mtf_channel):
                    results[camera.id] = cached
                    continue
            jobs.append((camera, self.config.mtf_mode, self.config.mtf_channel, str(path)))
        if jobs:
            if self.config.workers == 1:
                measured = [run_mtf_task(job) for job in jobs]
            else:
                with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
                    measured = list(pool.map(run_mtf_task, jobs))
            results.update({row["camera_id"]: row for row in measured})
        return {camera.id: results[camera.id] for camera in self.config.cameras}

    # Metrics

    def _baseline_detections(self, camera: CameraConfig, condition: str, manifest: SceneManifest) -> DetectionSet:
        detections = []
        slug = condition_slug(condition)
        for scene_id in sorted(manifest.scene_ids):
            task = self.files.read_json(self.root / TASKS_DIR / camera.id / slug / f"{scene_id}.json")
            detections.extend(Detection(d["image_id"], tuple(d["bbox"]), d["score"], d["category"])
                              for d in task["detections"] or [])
        return DetectionSet(BaselineDetector(self.config.detector_params).label, detections,
                            sorted(manifest.scene_ids))

    def _ground_truth(self, camera: CameraConfig, manifest: SceneManifest) -> Dict[str, List[List[float]]]:
        resolution = camera.sensor.resolution
        return {scene.scene_id: [ground_truth_bbox(scene, manifest.focal_length_mm, camera.sensor.pixel_size_um,
                                                   resolution, manifest.camera_height_m).xywh]
                for scene in manifest.scenes}

    def evaluate(self, camera: CameraConfig, condition: str, manifest: SceneManifest,
                 detections: DetectionSet) -> Tuple[APCurve, OD50Result, Optional[str]]:
        """AP curve, OD50 and optional bootstrap for one camera and condition"""
        slug = condition_slug(condition)
        records = match_by_distance(manifest, detections, self._ground_truth(camera, manifest))
        self.files.write_json(records_to_payload(records),
                              self.root / f"match_records_{camera.id}_{slug}.json")
        curve = curve_from_records(records, camera.id, condition)
        result = od50(curve)
        bootstrap_error = None
        if self.config.bootstrap:
            seed = ContentHasher.derive_seed(self.config.seed, "bootstrap", camera.id, condition)
            try:
                result = with_bootstrap(result, bootstrap_od50(records, self.config.bootstrap, seed))
            except MetricError as e:
                bootstrap_error = e.message
                self.logger.warning(f"{camera.id}/{condition}: {e.message}")
        return curve, result, bootstrap_error

    # SPM

    def _emit_spm(self, name: str, pairs: List[Tuple[float, APCurve]], axis: str,
                  od50_by_y: Dict[float, float]) -> List[str]:
        try:
            grid = build_grid(pairs, self.config.spm_resolution, axis)
        except DegenerateGridError as e:
            self.logger.warning(f"Skipping SPM '{name}': {e.message}")
            return []
        lines = contours(grid, self.config.spm_levels)
        csv_path, svg_path = f"spm_{name}.csv", f"spm_{name}.svg"
        emit(grid, lines, "csv", self.root / csv_path)
        emit(grid, lines, "svg", self.root / svg_path, od50_marker=od50_marker_points(grid, od50_by_y),
             width=self.config.svg_width, height=self.config.svg_height)
        return [csv_path, svg_path]

    def build_maps(self, curves: List[APCurve], od50s: Dict[Tuple[str, str], OD50Result],
                   mtf50s: Dict[str, dict], manifests: Dict[str, SceneManifest]) -> List[str]:
        written = []
        if self.config.lux_levels:
            for camera in self.config.cameras:
                pairs, marker = [], {}
                for curve in curves:
                    if curve.camera_id != camera.id:
                        continue
                    lux = manifests[curve.condition].scenes[0].target_lux
                    pairs.append((lux, curve))
                    result = od50s[(camera.id, curve.condition)]
                    if result.method == INTERPOLATED:
                        marker[lux] = result.od50
                written += self._emit_spm(f"lux_{camera.id}", pairs, "lux", marker)
        else:
            for condition in self.config.effective_conditions:
                pairs, marker = [], {}
                for curve in curves:
                    if curve.condition != condition:
                        continue
                    mtf50 = mtf50s[curve.camera_id]["mtf50_cyc_per_mm"]
                    pairs.append((mtf50, curve))
                    result = od50s[(curve.camera_id, condition)]
                    if result.method == INTERPOLATED:
                        marker[mtf50] = result.od50
                written += self._emit_spm(condition_slug(condition), pairs, "mtf50", marker)
        return written

    # Whole run

    def run(self, progress: Optional[Callable[[int, int], None]] = None) -> ExperimentResult:
        """Full experiment; a rerun of a finished experiment rewrites identical bytes"""
        self._claim_root()
        manifests = self.condition_manifests()
        for condition, manifest in manifests.items():
            self.files.write_manifest(manifest, self.root / f"manifest_{condition_slug(condition)}.json")

        external = None if self.config.uses_baseline else self.external_detections(manifests)
        self.task_seeds = []
        self.run_tasks(self._tasks(manifests), progress)
        mtf50s = self.measure_cameras()

        result = ExperimentResult(self.root, self.config_hash, mtf50s=mtf50s)
        od50_rows = []
        for camera in self.config.cameras:
            for condition, manifest in manifests.items():
                if external is not None:
                    detections = external[(camera.id, condition)]
                else:
                    detections = self._baseline_detections(camera, condition, manifest)
                    save_detections(detections, self.root / "detections" / camera.id /
                                    f"{condition_slug(condition)}.json")
                curve, od, bootstrap_error = self.evaluate(camera, condition, manifest, detections)
                result.curves.append(curve)
                result.od50s[(camera.id, condition)] = od
                row = {"camera_id": camera.id, "condition": condition, **od.to_dict()}
                if self.config.bootstrap:
                    row["bootstrap_error"] = bootstrap_error
                od50_rows.append(row)
                self.logger.info(f"{camera.id}/{condition}: OD50 {od.od50:.1f} m ({od.method})")

        self.files.write_table(curves_to_frame(result.curves), self.root / "ap_curves.csv")
        self.files.write_json(od50_rows, self.root / "od50.json")
        self.files.write_table(mtf50_frame(mtf50s), self.root / "mtf50.csv")
        if not self.config.lux_levels:
            trends = {}
            for condition in manifests:
                pairs = [(mtf50s[c.id]["mtf50_cyc_per_mm"], result.od50s[(c.id, condition)])
                         for c in self.config.cameras]
                trends[condition] = od50_trend(pairs)
            self.files.write_json(trends, self.root / "od50_trend.json")
        result.spm_files = self.build_maps(result.curves, result.od50s, mtf50s, manifests)

        result.files = self._write_run_log()
        twin_logger.log_stage("experiment_done", {"config_hash": self.config_hash, "root": str(self.root),
                                                  "files": len(result.files)})
        return result

    def _write_run_log(self) -> Dict[str, str]:
        outputs = sorted(str(p.relative_to(self.root)).replace("\\", "/") for p in self.root.rglob("*")
                         if p.is_file() and p.name != RUN_LOG and not p.name.endswith(".tmp"))
        files = {rel: ContentHasher.file_digest(self.root / rel) for rel in outputs}
        self.files.write_json({
            "config_hash": self.config_hash,
            "seed": self.config.seed,
            "collection_seed": self.collection_seed,
            "bootstrap_seeds": {
                f"{c.id}/{condition}": ContentHasher.derive_seed(self.config.seed, "bootstrap", c.id, condition)
                for c in self.config.cameras for condition in self.config.effective_conditions
            } if self.config.bootstrap else {},
            "tasks": self.task_seeds,
            "files": files,
        }, self.root / RUN_LOG)
        return files


def run_experiment(config: ExperimentConfig, progress: Optional[Callable[[int, int], None]] = None) -> ExperimentResult:
    return ExperimentService(config).run(progress)


def build_maps_from_bundle(input_dir, axis: str = "mtf50", levels: Sequence[float] = (0.3, 0.5, 0.7),
                           resolution: int = 64, output_dir=None, which: str = "lattice") -> List[str]:
    """Rebuild SPM CSV/SVG files from a result bundle's ap_curves.csv (and mtf50.csv for the MTF50 axis)"""
    from engines.metrics import curves_from_frame
    from generators.scene_generator import parse_illumination

    logger = logging.getLogger(__name__)
    files = FileService()
    input_dir = Path(input_dir)
    output = validate_output_dir(output_dir or input_dir)
    curves = curves_from_frame(files.read_table(input_dir / "ap_curves.csv"))

    groups: Dict[str, List[Tuple[float, APCurve]]] = {}
    if axis == "mtf50":
        table = files.read_table(input_dir / "mtf50.csv")
        mtf50 = dict(zip(table["camera_id"].astype(str), table["mtf50_cyc_per_mm"].astype(float)))
        for curve in curves:
            if curve.condition.startswith("lux:"):
                continue
            if curve.camera_id not in mtf50:
                raise DataError(f"No MTF50 for camera '{curve.camera_id}' in {input_dir / 'mtf50.csv'}")
            groups.setdefault(condition_slug(curve.condition), []).append((mtf50[curve.camera_id], curve))
    else:
        for curve in curves:
            kind, lux = parse_illumination(curve.condition)
            if kind == "lux":
                groups.setdefault(f"lux_{curve.camera_id}", []).append((lux, curve))
    if not groups:
        raise DataError(f"No curves in {input_dir} suit a {axis} map")

    written = []
    for name, pairs in sorted(groups.items()):
        grid = build_grid(pairs, resolution, axis)
        lines = contours(grid, levels)
        marker = {}
        for y, curve in pairs:
            result = od50(curve)
            if result.method == INTERPOLATED:
                marker[y] = result.od50
        emit(grid, lines, "csv", output / f"spm_{name}.csv", which=which)
        emit(grid, lines, "svg", output / f"spm_{name}.svg", od50_marker=od50_marker_points(grid, marker))
        written += [f"spm_{name}.csv", f"spm_{name}.svg"]
        logger.info(f"SPM '{name}': {grid.values.shape[0]} rows x {grid.values.shape[1]} distances, "
                    f"{len(lines)} contour(s)")
    return written

"""
camtwin command line: scene collections, MTF50, experiments, luminance sweeps, SPMs and OD50
"""
import argparse
import json
import logging
import re
import sys
from pathlib import Path
from typing import List, Optional

from utils.config import (ANCHOR_CAMERA, CameraConfig, ExperimentConfig, Settings, camera_id,
                          default_camera_grid, load_experiment_config)
from utils.error_handler import EXIT_CONFIG_ERROR, ConfigurationError, DataError, ErrorHandler, error_boundary
from utils.monitoring import setup_monitoring

logger = logging.getLogger("app")

_CAMERA_ID = re.compile(r"^p(?P<pixel>[0-9]*\.?[0-9]+)_f(?P<f>[0-9]*\.?[0-9]+)$")


def parse_levels(text: str) -> List[float]:
    try:
        levels = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"Levels must be comma-separated numbers, got '{text}'")
    ErrorHandler.validate_input(levels, "levels")
    return levels


def resolve_camera(identifier: str, config: Optional[ExperimentConfig] = None) -> CameraConfig:
    """Camera by id from the config, the default grid, or a p<pixel>_f<N> id"""
    cameras = config.cameras if config is not None else default_camera_grid()
    for camera in cameras:
        if camera.id == identifier:
            return camera
    match = _CAMERA_ID.match(identifier)
    if not match:
        raise ConfigurationError(f"Unknown camera '{identifier}' (expected an id like p1.4_f2.4)")
    focal = config.focal_length_mm if config is not None else 6.0
    return CameraConfig.build(float(match["pixel"]), float(match["f"]), focal)


def _print_json(payload):
    print(json.dumps(payload, indent=2, sort_keys=True))


@error_boundary("scenegen failed")
def cmd_scenegen(args, settings: Settings) -> int:
    from generators.scene_generator import RenderConfig, SceneGenerator

    ErrorHandler.validate_input(args.scenes_per_distance, "positive", name="--scenes-per-distance")
    output = args.output or str(Path(settings.output_dir) / "collections" / args.collection)
    render = RenderConfig(wave_step_nm=args.wave_step)
    manifest = SceneGenerator(args.workers or settings.workers).generate_collection(
        args.collection, args.seed, output, args.scenes_per_distance,
        illumination=args.illumination, config=render,
        progress=lambda done, total: logger.debug(f"{done}/{total} scenes"),
    )
    print(f"{len(manifest.scenes)} scenes written to {output}")


@error_boundary("mtf failed")
def cmd_mtf(args, settings: Settings) -> int:
    from engines.mtf import mean_wavelength_nm, measure_mtf50
    from engines.optics import cutoff_frequency, export_otf_csv

    config = load_experiment_config(args.config) if args.config else None
    camera = resolve_camera(args.camera, config)
    mode = args.mode or (config.mtf_mode if config else "slanted_edge")
    channel = args.channel or (config.mtf_channel if config else "luma")
    result = measure_mtf50(camera, mode, channel)
    if args.otf_csv:
        cutoff = float(cutoff_frequency(400.0, camera.optics.f_number))
        frequencies = [cutoff * i / 100.0 for i in range(101)]
        export_otf_csv(camera.optics, [450.0, 550.0, 650.0], frequencies, args.otf_csv)
    payload = result.to_row()
    payload["diffraction_cutoff_cyc_per_mm"] = float(cutoff_frequency(mean_wavelength_nm(camera),
                                                                      camera.optics.f_number))
    _print_json(payload)


def _experiment_config(args, settings: Settings, **extra) -> ExperimentConfig:
    overrides = {"workers": args.workers or settings.workers, "output_dir": args.output}
    overrides.update(extra)
    if args.config:
        return load_experiment_config(args.config, **overrides)
    payload = {k: v for k, v in overrides.items() if v is not None}
    payload.setdefault("output_dir", settings.output_dir)
    return ExperimentConfig.model_validate(payload)


def _report(result):
    print(f"Results in {result.root} (config {result.config_hash[:12]})")
    for (camera, condition), od in sorted(result.od50s.items()):
        print(f"  {camera:>10} {condition:>10}  OD50 {od.od50:7.1f} m  {od.method}")


@error_boundary("run failed")
def cmd_run(args, settings: Settings) -> int:
    from services.experiment_service import run_experiment

    ErrorHandler.validate_input(args.config, "existing_file")
    config = _experiment_config(args, settings)
    _report(run_experiment(config))


@error_boundary("sweep-lux failed")
def cmd_sweep_lux(args, settings: Settings) -> int:
    from services.experiment_service import run_experiment

    levels = parse_levels(args.levels)
    extra = {"lux_levels": levels, "scenes_per_distance": args.scenes_per_distance}
    if args.config:
        config = _experiment_config(args, settings, **extra)
        if args.camera:
            config = config.model_copy(update={"cameras": [resolve_camera(args.camera, config)]})
    else:
        camera = resolve_camera(args.camera or camera_id(*ANCHOR_CAMERA))
        config = _experiment_config(args, settings, cameras=[camera.model_dump()], **extra)
    _report(run_experiment(ExperimentConfig.model_validate(config.model_dump())))


@error_boundary("spm failed")
def cmd_spm(args, settings: Settings) -> int:
    from services.experiment_service import build_maps_from_bundle

    ErrorHandler.validate_input(args.input, "existing_dir")
    levels = parse_levels(args.levels)
    if any(level >= 1 for level in levels):
        raise ConfigurationError("Contour levels must lie in (0, 1)")
    written = build_maps_from_bundle(args.input, args.axis, levels, args.resolution, args.output,
                                     "dense" if args.dense else "lattice")
    for name in written:
        print(name)


@error_boundary("od50 failed")
def cmd_od50(args, settings: Settings) -> int:
    from engines.metrics import bootstrap_od50, curves_from_frame, od50, records_from_payload, with_bootstrap
    from services.experiment_service import condition_slug
    from services.file_service import FileService
    from utils.integrity import ContentHasher

    ErrorHandler.validate_input(args.curve, "existing_file")
    ErrorHandler.validate_input(args.bootstrap, "non_negative", name="--bootstrap")
    files = FileService()
    records_dir = Path(args.records or Path(args.curve).parent)
    rows = []
    for curve in curves_from_frame(files.read_table(args.curve)):
        result = od50(curve)
        if args.bootstrap:
            path = records_dir / f"match_records_{curve.camera_id}_{condition_slug(curve.condition)}.json"
            if not path.is_file():
                raise DataError(f"Bootstrap needs per-scene match records: {path} not found")
            records = records_from_payload(files.read_json(path))
            seed = ContentHasher.derive_seed(args.seed, "bootstrap", curve.camera_id, curve.condition)
            result = with_bootstrap(result, bootstrap_od50(records, args.bootstrap, seed))
        rows.append({"camera_id": curve.camera_id, "condition": curve.condition, **result.to_dict()})
    if args.output:
        files.write_json(rows, args.output)
    _print_json(rows)


@error_boundary("coco-import failed")
def cmd_coco_import(args, settings: Settings) -> int:
    from integrations.detection_io import Detection, DetectionSet, from_coco_results, save_detections
    from services.file_service import FileService

    ErrorHandler.validate_input(args.results, "existing_file")
    ErrorHandler.validate_input(args.manifest, "existing_file")
    files = FileService()
    manifest = files.read_manifest(args.manifest)
    if args.image_map:
        image_map = files.read_json(args.image_map)
    else:
        image_map = {scene_id: scene_id for scene_id in manifest.scene_ids}
        image_map.update({f"{scene_id}.png": scene_id for scene_id in manifest.scene_ids})
    detections = from_coco_results(files.read_json(args.results), image_map, args.category_id, args.detector)

    if args.origins:
        # Crop-relative boxes shifted by the origin in each PNG sidecar
        shifted = []
        for d in detections.detections:
            sidecar = files.read_json(files.sidecar_path(Path(args.origins) / f"{d.image_id}.png"))
            row0, col0 = sidecar.get("origin", (0, 0))
            x, y, w, h = d.bbox
            shifted.append(Detection(d.image_id, (x + col0, y + row0, w, h), d.score, d.category))
        detections = DetectionSet(detections.detector, shifted, detections.images)

    unknown = sorted({d.image_id for d in detections.detections} - set(manifest.scene_ids))
    if unknown:
        raise DataError(f"COCO results reference images outside the manifest, first '{unknown[0]}'")
    save_detections(detections, args.output)
    print(f"{len(detections.detections)} detections written to {args.output}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camtwin", description="Camera object-detection digital twin")
    parser.add_argument("--log-dir", help="Log directory (default: CAMTWIN_LOG_DIR or ./logs)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenegen", help="Generate a metric-scene collection")
    p.add_argument("--collection", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes-per-distance", type=int, default=50)
    p.add_argument("--illumination", default="day", help="day | night | dusk | lux:<value>")
    p.add_argument("--wave-step", type=float, default=10.0, help="Spectral sampling in nm")
    p.add_argument("--output")
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_scenegen)

    p = sub.add_parser("mtf", help="Measure a camera's MTF50")
    p.add_argument("--camera", required=True, help="Camera id, e.g. p1.4_f2.4")
    p.add_argument("--config")
    p.add_argument("--mode", choices=["slanted_edge", "analytic"])
    p.add_argument("--channel", choices=["luma", "green", "raw"])
    p.add_argument("--otf-csv", help="Also export diffraction OTF curves to this CSV")
    p.set_defaults(handler=cmd_mtf)

    p = sub.add_parser("run", help="Run an experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("sweep-lux", help="AP versus distance over a list of scene illuminances")
    p.add_argument("--levels", required=True, help="Comma-separated lux levels, e.g. 0.1,1,10,100")
    p.add_argument("--config")
    p.add_argument("--camera", help="Camera id (default: the anchor camera)")
    p.add_argument("--scenes-per-distance", type=int)
    p.add_argument("--output")
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_sweep_lux)

    p = sub.add_parser("spm", help="Build System Performance Maps from a result bundle")
    p.add_argument("--input", required=True)
    p.add_argument("--axis", choices=["mtf50", "lux"], default="mtf50")
    p.add_argument("--levels", default="0.3,0.5,0.7")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--dense", action="store_true", help="Write the dense grid instead of the lattice")
    p.add_argument("--output")
    p.set_defaults(handler=cmd_spm)

    p = sub.add_parser("od50", help="OD50 of AP curves, optionally with bootstrap")
    p.add_argument("--curve", required=True, help="ap_curves.csv")
    p.add_argument("--bootstrap", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--records", help="Directory of match_records_*.json (default: the curve's directory)")
    p.add_argument("--output")
    p.set_defaults(handler=cmd_od50)

    p = sub.add_parser("coco-import", help="Convert COCO detection results to a detection file")
    p.add_argument("--results", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--image-map", help="JSON object mapping COCO image ids or file names to scene ids")
    p.add_argument("--origins", help="Directory of exported PNGs whose sidecars hold crop origins")
    p.add_argument("--category-id", type=int, default=3)
    p.add_argument("--detector", default="coco")
    p.set_defaults(handler=cmd_coco_import)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings.from_env()
    except ValueError as e:
        print(f"Invalid environment settings: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    setup_monitoring(args.log_dir or settings.log_dir)
    return args.handler(args, settings)


if __name__ == "__main__":
    sys.exit(main())

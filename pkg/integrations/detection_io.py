"""
External detector boundary: detection JSON files and the COCO-results adapter
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from utils.error_handler import DetectionFormatError

logger = logging.getLogger(__name__)

CAR_CATEGORY = "car"
COCO_CAR_CATEGORY_ID = 3
SCORE_CLAMP_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Detection:
    image_id: str
    bbox: tuple  # (x, y, w, h) in full-frame pixels
    score: float
    category: str = CAR_CATEGORY

    def __post_init__(self):
        if len(self.bbox) != 4:
            raise DetectionFormatError(f"bbox must have 4 numbers, got {self.bbox}")
        bbox = tuple(float(v) for v in self.bbox)
        if not all(math.isfinite(v) for v in bbox):
            raise DetectionFormatError(f"Non-finite bbox for image '{self.image_id}': {bbox}")
        if bbox[2] <= 0 or bbox[3] <= 0:
            raise DetectionFormatError(f"Box for image '{self.image_id}' has non-positive size: {bbox}")
        if not 0.0 <= self.score <= 1.0:
            raise DetectionFormatError(f"Score {self.score} for image '{self.image_id}' outside [0, 1]")
        if self.category != CAR_CATEGORY:
            raise DetectionFormatError(f"Unsupported category '{self.category}'")
        object.__setattr__(self, "bbox", bbox)
        object.__setattr__(self, "score", float(self.score))

    def to_dict(self) -> Dict[str, Any]:
        return {"image_id": self.image_id, "bbox": list(self.bbox), "score": self.score, "category": self.category}


@dataclass
class DetectionSet:
    """Scored car boxes from one detector, plus the images it processed"""
    detector: str
    detections: List[Detection] = field(default_factory=list)
    images: Optional[List[str]] = None

    def covered_images(self) -> set:
        covered = {d.image_id for d in self.detections}
        if self.images is not None:
            covered.update(self.images)
        return covered

    def for_image(self, image_id: str) -> List[Detection]:
        return [d for d in self.detections if d.image_id == image_id]

    def to_dict(self) -> Dict[str, Any]:
        payload = {"detector": self.detector, "detections": [d.to_dict() for d in self.detections]}
        if self.images is not None:
            payload["images"] = list(self.images)
        return payload

    def __eq__(self, other):
        return isinstance(other, DetectionSet) and self.to_dict() == other.to_dict()


def _parse_score(raw: Any, image_id: str) -> float:
    score = float(raw)
    if 1.0 < score <= 1.0 + SCORE_CLAMP_TOLERANCE:
        logger.warning(f"Clamping score {score!r} to 1.0 for image '{image_id}'")
        return 1.0
    return score


def parse_detections(payload: Any, known_ids: Optional[Iterable[str]] = None) -> DetectionSet:
    """Validate a detection document; known_ids rejects boxes for images outside the manifest"""
    if not isinstance(payload, dict) or "detections" not in payload:
        raise DetectionFormatError("Detection document must be an object with a 'detections' list")
    entries = payload["detections"]
    if not isinstance(entries, list):
        raise DetectionFormatError("'detections' must be a list")
    known = set(known_ids) if known_ids is not None else None

    detections = []
    for index, entry in enumerate(entries):
        try:
            image_id = str(entry["image_id"])
            bbox = tuple(entry["bbox"])
            score = _parse_score(entry["score"], image_id)
            category = entry.get("category", CAR_CATEGORY)
        except (KeyError, TypeError, ValueError) as e:
            raise DetectionFormatError(f"Detection #{index} is malformed: {e}", details={"index": index})
        if known is not None and image_id not in known:
            raise DetectionFormatError(f"Unknown image_id '{image_id}'", details={"image_id": image_id})
        detections.append(Detection(image_id, bbox, score, category))

    images = payload.get("images")
    if images is not None:
        if not isinstance(images, list):
            raise DetectionFormatError("'images' must be a list of image ids")
        images = [str(image_id) for image_id in images]
        if known is not None:
            unknown = sorted(set(images) - known)
            if unknown:
                raise DetectionFormatError(f"Unknown image_id '{unknown[0]}'", details={"image_ids": unknown})
    return DetectionSet(str(payload.get("detector", "external")), detections, images)


def load_detections(path: Union[str, Path], manifest=None) -> DetectionSet:
    """Read a detection JSON file, validated against a SceneManifest when given"""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DetectionFormatError(f"Cannot parse detections in {path}: {e}", details={"path": str(path)})
    known = manifest.scene_ids if manifest is not None else None
    detections = parse_detections(payload, known)
    logger.debug(f"Loaded {len(detections.detections)} detections from {path}")
    return detections


def dumps_detections(detections: DetectionSet) -> str:
    return json.dumps(detections.to_dict(), indent=2) + "\n"


def save_detections(detections: DetectionSet, path: Union[str, Path]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps_detections(detections), encoding="utf-8")


def from_coco_results(results: List[Dict[str, Any]], image_map: Dict[Any, str],
                      category_id: int = COCO_CAR_CATEGORY_ID, detector: str = "coco") -> DetectionSet:
    """Map COCO [{"image_id", "category_id", "bbox", "score"}] results onto scene ids.

    image_map takes COCO image ids (or file names) to manifest scene ids; results of
    other categories are dropped.
    """
    if not isinstance(results, list):
        raise DetectionFormatError("COCO results must be a list")
    lookup = {str(key): value for key, value in image_map.items()}
    detections = []
    dropped = 0
    for index, entry in enumerate(results):
        try:
            if int(entry["category_id"]) != category_id:
                dropped += 1
                continue
            key = str(entry["image_id"])
            if key not in lookup:
                raise DetectionFormatError(f"COCO image_id '{key}' has no scene mapping")
            image_id = lookup[key]
            detections.append(Detection(image_id, tuple(entry["bbox"]), _parse_score(entry["score"], image_id)))
        except (KeyError, TypeError, ValueError) as e:
            raise DetectionFormatError(f"COCO result #{index} is malformed: {e}", details={"index": index})
    if dropped:
        logger.info(f"Dropped {dropped} COCO results outside category {category_id}")
    return DetectionSet(detector, detections, sorted(set(lookup.values())))

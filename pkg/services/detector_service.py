"""
Baseline car detector: row-median background subtraction, a MAD threshold on the residual
and 8-connected components. Fragments of one object that each pass min_area and lie within
2 * merge_radius px of each other are reported as one box.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage, stats

from engines.isp import RGBImage, to_luma
from integrations.detection_io import Detection, DetectionSet
from utils.monitoring import twin_logger

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


class DetectorParams(BaseModel):
    """Baseline detector tuning; smoothing_sigma > 0 opts into a Gaussian pre-filter of the luma"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    k: float = Field(4.0, gt=0)
    min_area: int = Field(9, ge=1)
    smoothing_sigma: float = Field(0.0, ge=0)
    mad_floor: float = Field(0.5, ge=0)
    merge_radius: int = Field(2, ge=0)


class BaselineDetector:
    """Row-median background subtraction with MAD thresholding and connected components"""

    NAME = "baseline"
    VERSION = "2"

    def __init__(self, params: Optional[DetectorParams] = None):
        self.logger = logging.getLogger(__name__)
        self.params = params or DetectorParams()

    @property
    def label(self) -> str:
        return f"{self.NAME}-{self.VERSION}"

    def residual(self, image: RGBImage) -> np.ndarray:
        """Luma (optionally smoothed) minus its per-row median"""
        luma = to_luma(image.rgb)
        if self.params.smoothing_sigma > 0:
            luma = ndimage.gaussian_filter(luma, self.params.smoothing_sigma, mode="nearest")
        return luma - np.median(luma, axis=1, keepdims=True)

    def _groups(self, kept: np.ndarray):
        """Label image of the kept pixels, nearby kept components sharing a label"""
        if self.params.merge_radius == 0:
            return ndimage.label(kept, structure=_EIGHT_CONNECTED)
        grown = ndimage.binary_dilation(kept, structure=_EIGHT_CONNECTED, iterations=self.params.merge_radius)
        groups, count = ndimage.label(grown, structure=_EIGHT_CONNECTED)
        return np.where(kept, groups, 0), count

    def detect(self, image: RGBImage, image_id: str = "") -> List[Detection]:
        """Boxes in full-frame pixels, ordered by group label"""
        residual = self.residual(image)
        magnitude = np.abs(residual)
        mad = max(float(stats.median_abs_deviation(residual, axis=None)), self.params.mad_floor)
        if mad <= 0:
            return []
        threshold = self.params.k * mad

        labels, count = ndimage.label(magnitude > threshold, structure=_EIGHT_CONNECTED)
        if count == 0:
            return []
        areas = ndimage.sum_labels(np.ones_like(magnitude), labels, np.arange(count + 1))
        areas[0] = 0
        kept = areas[labels] >= self.params.min_area
        if not kept.any():
            return []

        groups, group_count = self._groups(kept)
        means = ndimage.mean(magnitude, groups, np.arange(1, group_count + 1))

        row0, col0 = image.origin
        detections = []
        for index, box in enumerate(ndimage.find_objects(groups)):
            if box is None:
                continue
            rows, cols = box
            score = min(1.0, float(means[index]) / (2.0 * threshold))
            detections.append(Detection(
                image_id,
                (float(cols.start + col0), float(rows.start + row0),
                 float(cols.stop - cols.start), float(rows.stop - rows.start)),
                score,
            ))
        self.logger.debug(f"{image_id or 'image'}: {count} components, {len(detections)} detections (MAD {mad:.3g})")
        return detections

    def detect_batch(self, images: Dict[str, RGBImage], workers: int = 1) -> DetectionSet:
        """Detect on many images; output order follows sorted image ids"""
        ids = sorted(images)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda image_id: self.detect(images[image_id], image_id), ids))
        else:
            results = [self.detect(images[image_id], image_id) for image_id in ids]
        detections = [d for per_image in results for d in per_image]
        twin_logger.log_stage("detections_emitted", {"detector": self.label, "images": len(ids),
                                                     "detections": len(detections)})
        return DetectionSet(self.label, detections, ids)


def baseline_detect(image: RGBImage, params: Optional[DetectorParams] = None, image_id: str = "") -> List[Detection]:
    return BaselineDetector(params).detect(image, image_id)

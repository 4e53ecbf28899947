"""
Detection metrics: IoU, COCO-style average precision, AP-vs-distance curves,
OD50 extraction and bootstrap uncertainty.

AP is the 101-point interpolated AP averaged over IoU thresholds 0.50:0.05:0.95.
Detections are ranked by score descending; ties go to the smaller image_id, then
to the earlier detection. Matching is greedy per image, which gives the same
true-positive flags as a global pass because matches never cross images.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from integrations.detection_io import Detection, DetectionSet
from utils.error_handler import DomainError, FormatError, MetricError, UndefinedAPError

logger = logging.getLogger(__name__)

IOU_THRESHOLDS = np.round(np.linspace(0.50, 0.95, 10), 2)
RECALL_GRID = np.linspace(0.0, 1.0, 101)
OD50_LEVEL = 0.5

INTERPOLATED = "interpolated"
EXTRAPOLATED = "extrapolated"
BELOW_RANGE = "below_range"

AP_CURVE_COLUMNS = ["camera_id", "condition", "distance_m", "ap", "n_scenes"]


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two (x, y, w, h) boxes"""
    ax, ay, aw, ah = (float(v) for v in a)
    bx, by, bw, bh = (float(v) for v in b)
    if min(aw, ah, bw, bh) < 0:
        raise DomainError("Box width and height must be >= 0")
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


@dataclass
class SceneMatchRecord:
    """Per-image match outcome: one row of TP flags (one per threshold) for each detection"""
    image_id: str
    n_gt: int
    scores: np.ndarray
    tp: np.ndarray  # (n_det, n_thresholds) bool, rows in the image's ranking order

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "n_gt": int(self.n_gt),
            "detections": [{"score": float(s), "tp": [bool(v) for v in row]}
                           for s, row in zip(self.scores, self.tp)],
        }

    @classmethod
    def from_dict(cls, payload: dict, n_thresholds: int = len(IOU_THRESHOLDS)) -> "SceneMatchRecord":
        dets = payload.get("detections", [])
        scores = np.array([d["score"] for d in dets], dtype=np.float64)
        tp = np.array([d["tp"] for d in dets], dtype=bool).reshape(len(dets), n_thresholds)
        return cls(str(payload["image_id"]), int(payload["n_gt"]), scores, tp)


def match_scene(image_id: str, gt_boxes: Sequence[Sequence[float]], detections: Sequence[Detection],
                thresholds: Sequence[float] = IOU_THRESHOLDS) -> SceneMatchRecord:
    """Greedy matching of one image's detections at every threshold"""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    ranked = [detections[i] for i in order]
    overlaps = np.array([[iou(d.bbox, g) for g in gt_boxes] for d in ranked]).reshape(len(ranked), len(gt_boxes))

    tp = np.zeros((len(ranked), thresholds.size), dtype=bool)
    for t, tau in enumerate(thresholds):
        taken = np.zeros(len(gt_boxes), dtype=bool)
        for d in range(len(ranked)):
            candidates = np.where(~taken & (overlaps[d] >= tau), overlaps[d], -1.0)
            if candidates.size and candidates.max() >= 0:
                best = int(np.argmax(candidates))
                taken[best] = True
                tp[d, t] = True
    scores = np.array([d.score for d in ranked], dtype=np.float64)
    return SceneMatchRecord(image_id, len(gt_boxes), scores, tp)


def interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP of one ranked TP sequence"""
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    sampled = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean())


def ap_from_records(records: Sequence[SceneMatchRecord], n_thresholds: int = len(IOU_THRESHOLDS)) -> float:
    """AP over any multiset of scenes; repeated scenes count once per occurrence"""
    n_gt = sum(r.n_gt for r in records)
    if n_gt == 0:
        raise UndefinedAPError("Average precision is undefined without ground truth")
    keys, rows = [], []
    for position, record in enumerate(records):
        for i, score in enumerate(record.scores):
            keys.append((-float(score), record.image_id, position, i))
            rows.append(record.tp[i])
    if not rows:
        return 0.0
    order = sorted(range(len(keys)), key=keys.__getitem__)
    tp = np.asarray(rows, dtype=bool)[order]
    return float(np.mean([interpolated_ap(tp[:, t], n_gt) for t in range(n_thresholds)]))


def coco_ap(gt: Dict[str, Sequence[Sequence[float]]], detections, thresholds: Sequence[float] = IOU_THRESHOLDS) -> float:
    """Mean over thresholds of the 101-point AP; gt maps image_id to its boxes"""
    items = detections.detections if isinstance(detections, DetectionSet) else list(detections)
    if sum(len(boxes) for boxes in gt.values()) == 0:
        raise UndefinedAPError("Average precision is undefined without ground truth")
    by_image: Dict[str, List[Detection]] = {image_id: [] for image_id in gt}
    for det in items:
        by_image.setdefault(det.image_id, []).append(det)
    records = [match_scene(image_id, gt.get(image_id, []), by_image[image_id], thresholds)
               for image_id in sorted(by_image)]
    return ap_from_records(records, len(thresholds))


@dataclass(frozen=True)
class APPoint:
    distance_m: float
    ap: float
    n_scenes: int


@dataclass
class APCurve:
    """AP versus distance for one camera and condition"""
    camera_id: str
    condition: str
    points: List[APPoint] = field(default_factory=list)

    def __post_init__(self):
        distances = [p.distance_m for p in self.points]
        if any(b <= a for a, b in zip(distances, distances[1:])):
            raise MetricError("AP curve distances must be strictly increasing")
        if any(not 0.0 <= p.ap <= 1.0 for p in self.points):
            raise MetricError("AP values must lie in [0, 1]")

    @property
    def distances(self) -> np.ndarray:
        return np.array([p.distance_m for p in self.points])

    @property
    def ap(self) -> np.ndarray:
        return np.array([p.ap for p in self.points])


def match_by_distance(manifest, detections: DetectionSet, gt: Dict[str, Sequence[Sequence[float]]],
                      thresholds: Sequence[float] = IOU_THRESHOLDS) -> Dict[float, List[SceneMatchRecord]]:
    """Match records grouped by manifest distance, scenes in manifest order"""
    by_image: Dict[str, List[Detection]] = {}
    for det in detections.detections:
        by_image.setdefault(det.image_id, []).append(det)
    grouped: Dict[float, List[SceneMatchRecord]] = {}
    for distance in sorted(set(manifest.distances_m)):
        scenes = manifest.scenes_at(distance)
        if not scenes:
            raise MetricError(f"No scenes at distance {distance} m")
        grouped[distance] = [match_scene(s.scene_id, gt[s.scene_id], by_image.get(s.scene_id, []), thresholds)
                             for s in scenes]
    return grouped


def curve_from_records(records: Dict[float, List[SceneMatchRecord]], camera_id: str = "",
                       condition: str = "") -> APCurve:
    points = [APPoint(float(d), ap_from_records(records[d]), len(records[d])) for d in sorted(records)]
    return APCurve(camera_id, condition, points)


def ap_by_distance(manifest, detections: DetectionSet, gt: Dict[str, Sequence[Sequence[float]]],
                   camera_id: str = "", condition: str = "") -> APCurve:
    """AP per manifest distance"""
    if not manifest.distances_m:
        raise MetricError("Manifest has no distances")
    return curve_from_records(match_by_distance(manifest, detections, gt), camera_id, condition)


@dataclass
class OD50Result:
    od50: float
    method: str
    reliable: bool
    bootstrap_std: Optional[float] = None
    bootstrap_used: Optional[int] = None
    bootstrap_excluded: Optional[int] = None
    bootstrap_ci95: Optional[Tuple[float, float]] = None

    def to_dict(self) -> dict:
        return {
            "od50_m": float(self.od50),
            "method": self.method,
            "reliable": bool(self.reliable),
            "bootstrap_std_m": self.bootstrap_std,
            "bootstrap_used": self.bootstrap_used,
            "bootstrap_excluded": self.bootstrap_excluded,
            "bootstrap_ci95_m": list(self.bootstrap_ci95) if self.bootstrap_ci95 is not None else None,
        }


def od50(curve: APCurve) -> OD50Result:
    """Distance where AP falls to 0.5"""
    d, a = curve.distances, curve.ap
    if d.size < 2:
        raise MetricError("OD50 needs at least two curve points")
    if a[0] < OD50_LEVEL:
        return OD50Result(float(d[0]), BELOW_RANGE, False)
    for i in range(d.size):
        if a[i] == OD50_LEVEL:
            return OD50Result(float(d[i]), INTERPOLATED, True)
        if i + 1 < d.size and a[i] >= OD50_LEVEL > a[i + 1]:
            distance = d[i] + (d[i + 1] - d[i]) * (a[i] - OD50_LEVEL) / (a[i] - a[i + 1])
            return OD50Result(float(distance), INTERPOLATED, True)

    slope = (a[-1] - a[-2]) / (d[-1] - d[-2])
    distance = d[-1] + (OD50_LEVEL - a[-1]) / slope if slope < 0 else d[-1]
    logger.debug(f"AP never falls to {OD50_LEVEL} for {curve.camera_id}/{curve.condition}; extrapolated {distance:.1f} m")
    return OD50Result(float(distance), EXTRAPOLATED, False)


@dataclass
class BootstrapResult:
    std: float
    used: int
    excluded: int
    ci95: Tuple[float, float]
    replicates: np.ndarray


def _replicate_od50(records: Dict[float, List[SceneMatchRecord]], seed: int, b: int) -> OD50Result:
    rng = np.random.default_rng([seed, b])
    resampled = {}
    for distance in sorted(records):
        scenes = records[distance]
        picks = rng.integers(0, len(scenes), size=len(scenes))
        resampled[distance] = [scenes[i] for i in picks]
    return od50(curve_from_records(resampled))


def bootstrap_od50(records: Dict[float, List[SceneMatchRecord]], B: int, seed: int,
                   workers: int = 1) -> BootstrapResult:
    """Scene-resampling bootstrap of OD50; only interpolated replicates count"""
    if B < 2:
        raise MetricError(f"Bootstrap needs B >= 2, got {B}")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda b: _replicate_od50(records, seed, b), range(B)))
    else:
        results = [_replicate_od50(records, seed, b) for b in range(B)]

    values = np.array([r.od50 for r in results if r.method == INTERPOLATED])
    excluded = B - values.size
    if values.size == 0:
        raise MetricError(f"All {B} bootstrap replicates failed to interpolate OD50")
    std = float(np.std(values, ddof=1)) if values.size >= 2 else 0.0
    low, high = np.percentile(values, [2.5, 97.5])
    logger.info(f"Bootstrap OD50: std {std:.3f} m over {values.size} replicates, {excluded} excluded")
    return BootstrapResult(std, int(values.size), int(excluded), (float(low), float(high)), values)


def with_bootstrap(result: OD50Result, boot: BootstrapResult) -> OD50Result:
    return OD50Result(result.od50, result.method, result.reliable, boot.std, boot.used, boot.excluded, boot.ci95)


def od50_trend(pairs: Iterable[Tuple[float, OD50Result]]) -> Optional[dict]:
    """Least-squares OD50 versus MTF50 over interpolated results"""
    usable = [(float(m), r.od50) for m, r in pairs if r.method == INTERPOLATED]
    if len(usable) < 2 or len({m for m, _ in usable}) < 2:
        return None
    x, y = np.array(usable).T
    fit = stats.linregress(x, y)
    return {
        "slope_m_per_cyc_mm": float(fit.slope),
        "intercept_m": float(fit.intercept),
        "rvalue": float(fit.rvalue),
        "n": len(usable),
    }


def curves_to_frame(curves: Iterable[APCurve]) -> pd.DataFrame:
    rows = [(c.camera_id, c.condition, p.distance_m, p.ap, p.n_scenes) for c in curves for p in c.points]
    frame = pd.DataFrame(rows, columns=AP_CURVE_COLUMNS)
    return frame.astype({"distance_m": float, "ap": float, "n_scenes": int})


def curves_from_frame(frame: pd.DataFrame) -> List[APCurve]:
    """Group CSV rows back into curves, keeping first-appearance order"""
    missing = [c for c in AP_CURVE_COLUMNS if c not in frame.columns]
    if missing:
        raise FormatError(f"AP curve table lacks columns {missing}")
    curves = []
    frame = frame.astype({"camera_id": str, "condition": str})
    for (camera_id, condition), rows in frame.groupby(["camera_id", "condition"], sort=False):
        points = [APPoint(float(r.distance_m), float(r.ap), int(r.n_scenes)) for r in rows.itertuples()]
        curves.append(APCurve(camera_id, condition, sorted(points, key=lambda p: p.distance_m)))
    return curves


def records_to_payload(records: Dict[float, List[SceneMatchRecord]]) -> dict:
    return {
        "thresholds": [float(t) for t in IOU_THRESHOLDS],
        "distances": [{"distance_m": float(d), "scenes": [r.to_dict() for r in records[d]]} for d in sorted(records)],
    }


def records_from_payload(payload: dict) -> Dict[float, List[SceneMatchRecord]]:
    n = len(payload.get("thresholds", IOU_THRESHOLDS))
    return {float(group["distance_m"]): [SceneMatchRecord.from_dict(s, n) for s in group["scenes"]]
            for group in payload["distances"]}

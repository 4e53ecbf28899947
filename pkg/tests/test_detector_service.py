"""
Unit tests for the baseline car detector
"""
import os
import sys
import unittest

import numpy as np
import pydantic

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from engines.isp import RGBImage
from engines.metrics import iou
from services.detector_service import BaselineDetector, DetectorParams, baseline_detect


def gray_image(origin=(0, 0), rectangle=None):
    rgb = np.full((60, 80, 3), 100, dtype=np.uint8)
    if rectangle is not None:
        r0, r1, c0, c1 = rectangle
        rgb[r0:r1, c0:c1] = 200
    return RGBImage(rgb, {}, origin)


class TestBaselineDetector(unittest.TestCase):

    def setUp(self):
        self.detector = BaselineDetector()

    def test_label(self):
        self.assertEqual(self.detector.label, "baseline-2")

    def test_blank_image(self):
        self.assertEqual(self.detector.detect(gray_image(), "blank"), [])

    def test_bright_rectangle(self):
        detections = self.detector.detect(gray_image(rectangle=(20, 30, 30, 45)), "car")
        self.assertEqual(len(detections), 1)
        x, y, w, h = detections[0].bbox
        self.assertLessEqual(x, 30)
        self.assertLessEqual(y, 20)
        self.assertGreaterEqual(x + w, 45)
        self.assertGreaterEqual(y + h, 30)
        self.assertLessEqual(w, 15 + 6)
        self.assertLessEqual(h, 10 + 6)
        self.assertEqual(detections[0].image_id, "car")
        self.assertTrue(0.0 < detections[0].score <= 1.0)

    def test_boxes_in_full_frame_coordinates(self):
        local = self.detector.detect(gray_image(rectangle=(20, 30, 30, 45)), "a")[0].bbox
        shifted = self.detector.detect(gray_image(origin=(1000, 2000), rectangle=(20, 30, 30, 45)), "a")[0].bbox
        self.assertEqual(shifted, (local[0] + 2000, local[1] + 1000, local[2], local[3]))

    def test_min_area_filters_components(self):
        detector = BaselineDetector(DetectorParams(min_area=10000))
        self.assertEqual(detector.detect(gray_image(rectangle=(20, 30, 30, 45))), [])

    def test_invalid_params(self):
        with self.assertRaises(pydantic.ValidationError):
            DetectorParams(k=0)
        with self.assertRaises(pydantic.ValidationError):
            DetectorParams(threshold=3)

    def test_batch_follows_sorted_ids(self):
        images = {"b": gray_image(rectangle=(20, 30, 30, 45)), "a": gray_image()}
        first = self.detector.detect_batch(images)
        second = self.detector.detect_batch(images, workers=2)
        self.assertEqual(first.images, ["a", "b"])
        self.assertEqual(first, second)
        self.assertEqual([d.image_id for d in first.detections], ["b"])

    def test_function_form(self):
        image = gray_image(rectangle=(20, 30, 30, 45))
        self.assertEqual(baseline_detect(image, image_id="x"), self.detector.detect(image, "x"))


SKY, ROAD, DARK_CAR = 200, 120, 40


def road_image(boxes=(), horizon=30, blurred_horizon=False, value=DARK_CAR, specks=()):
    """Sky above `horizon`, a brighter-than-car road band below, flat rectangles (x, y, w, h) on top"""
    rgb = np.full((80, 120, 3), ROAD, dtype=np.uint8)
    rgb[:horizon] = SKY
    if blurred_horizon:
        rgb[horizon] = (SKY + ROAD) // 2
    for x, y, w, h in boxes:
        rgb[y:y + h, x:x + w] = value
    for row, col in specks:
        rgb[row, col] = value
    return RGBImage(rgb)


class TestRoadFixtures(unittest.TestCase):

    def setUp(self):
        self.detector = BaselineDetector()

    def test_default_params(self):
        params = DetectorParams()
        self.assertEqual((params.k, params.min_area, params.smoothing_sigma), (4.0, 9, 0.0))

    def test_single_dark_car(self):
        car = (40, 45, 20, 16)
        detections = self.detector.detect(road_image([car]), "car")
        self.assertEqual(len(detections), 1)
        self.assertGreaterEqual(iou(detections[0].bbox, car), 0.5)
        self.assertEqual(detections[0].bbox, (40.0, 45.0, 20.0, 16.0))

    def test_two_separated_cars(self):
        cars = [(20, 45, 20, 16), (60, 45, 20, 16)]
        detections = self.detector.detect(road_image(cars), "pair")
        self.assertEqual(len(detections), 2)
        self.assertEqual(sorted(d.bbox for d in detections), [(20.0, 45.0, 20.0, 16.0), (60.0, 45.0, 20.0, 16.0)])

    def test_translation_shifts_box(self):
        base = self.detector.detect(road_image([(40, 45, 20, 16)]))[0].bbox
        for dx, dy in ((7, 3), (-5, 9), (0, -4)):
            moved = self.detector.detect(road_image([(40 + dx, 45 + dy, 20, 16)]))[0].bbox
            self.assertEqual(moved, (base[0] + dx, base[1] + dy, base[2], base[3]), (dx, dy))

    def test_car_across_blurred_horizon_is_one_box(self):
        """A car whose value matches the horizon row splits into two fragments that report as one box"""
        car = (40, 20, 30, 31)
        image = road_image([car], blurred_horizon=True, value=(SKY + ROAD) // 2)
        detections = self.detector.detect(image, "horizon")
        self.assertEqual(len(detections), 1)
        self.assertEqual(detections[0].bbox, (40.0, 20.0, 30.0, 31.0))

        split = BaselineDetector(DetectorParams(merge_radius=0)).detect(image, "horizon")
        self.assertEqual(sorted(d.bbox for d in split), [(40.0, 20.0, 30.0, 10.0), (40.0, 31.0, 30.0, 20.0)])

    def test_small_fragments_do_not_join(self):
        """Pixels of components below min_area neither report nor extend a nearby box"""
        detections = self.detector.detect(road_image([(40, 45, 20, 16)], specks=[(45, 62)]))
        self.assertEqual([d.bbox for d in detections], [(40.0, 45.0, 20.0, 16.0)])

    def test_smoothing_is_opt_in_and_grows_boxes(self):
        car = (40, 45, 20, 16)
        smoothed = BaselineDetector(DetectorParams(smoothing_sigma=1.0)).detect(road_image([car]))
        self.assertEqual(len(smoothed), 1)
        x, y, w, h = smoothed[0].bbox
        self.assertLessEqual(x, 40)
        self.assertLessEqual(y, 45)
        self.assertGreater(w * h, 20 * 16)


if __name__ == '__main__':
    unittest.main()

"""
SVG rendering of System Performance Maps
"""
import logging
import math
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from engines.spm import Contour, SPMGrid

SVG_NS = "http://www.w3.org/2000/svg"
CONTOUR_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd")
AXIS_TITLES = {"mtf50": "MTF50 (cycles/mm)", "lux": "Scene illuminance (lux)"}


class SVGGenerator:
    """Grayscale AP map (0 black, 1 white) with iso-AP contours, ticks and an optional OD50 marker"""

    def __init__(self, width: int = 640, height: int = 480, margin: int = 70,
                 contour_colors: Sequence[str] = CONTOUR_COLORS):
        self.logger = logging.getLogger(__name__)
        self.width = width
        self.height = height
        self.margin = margin
        self.contour_colors = tuple(contour_colors)

    def generate_spm_svg(self, grid: SPMGrid, grid_contours: List[Contour],
                         od50_marker: Optional[Sequence[Tuple[float, float]]] = None) -> str:
        """Complete SVG document as text"""
        ET.register_namespace("", SVG_NS)
        root = ET.Element(f"{{{SVG_NS}}}svg", {
            "width": str(self.width), "height": str(self.height),
            "viewBox": f"0 0 {self.width} {self.height}",
        })
        ET.SubElement(root, f"{{{SVG_NS}}}title").text = f"Average precision vs distance and {grid.axis}"

        self._add_cells(root, grid)
        self._add_contours(root, grid, grid_contours)
        if od50_marker:
            self._add_od50_marker(root, grid, od50_marker)
        self._add_axes(root, grid)

        ET.indent(root)
        return ET.tostring(root, encoding="unicode", xml_declaration=True) + "\n"

    def write(self, grid: SPMGrid, grid_contours: List[Contour], path: Union[str, Path],
              od50_marker: Optional[Sequence[Tuple[float, float]]] = None):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.generate_spm_svg(grid, grid_contours, od50_marker), encoding="utf-8")
        self.logger.debug(f"SVG map with {len(grid_contours)} contours written to {path}")

    # Coordinate mapping

    def _plot_box(self) -> Tuple[float, float, float, float]:
        return self.margin, self.margin / 2.0, self.width - 1.5 * self.margin, self.height - 1.5 * self.margin

    def _px(self, grid: SPMGrid, distance) -> np.ndarray:
        left, _, plot_w, _ = self._plot_box()
        x0, x1 = grid.dense_x[0], grid.dense_x[-1]
        return left + (np.asarray(distance, dtype=np.float64) - x0) / (x1 - x0) * plot_w

    def _py(self, grid: SPMGrid, y) -> np.ndarray:
        _, top, _, plot_h = self._plot_box()
        y = np.asarray(y, dtype=np.float64)
        lo, hi = grid.dense_y[0], grid.dense_y[-1]
        if grid.log_y:
            fraction = (np.log10(y) - math.log10(lo)) / (math.log10(hi) - math.log10(lo))
        else:
            fraction = (y - lo) / (hi - lo)
        return top + (1.0 - fraction) * plot_h

    # Layers

    def _add_cells(self, root: ET.Element, grid: SPMGrid):
        layer = ET.SubElement(root, f"{{{SVG_NS}}}g", {"id": "cells", "shape-rendering": "crispEdges"})
        xs = self._px(grid, grid.dense_x)
        ys = self._py(grid, grid.dense_y)
        for i in range(grid.dense_y.size - 1):
            for j in range(grid.dense_x.size - 1):
                ap = float(grid.dense[i:i + 2, j:j + 2].mean())
                level = int(round(255 * min(max(ap, 0.0), 1.0)))
                ET.SubElement(layer, f"{{{SVG_NS}}}rect", {
                    "x": f"{xs[j]:.2f}", "y": f"{ys[i + 1]:.2f}",
                    "width": f"{xs[j + 1] - xs[j]:.2f}", "height": f"{ys[i] - ys[i + 1]:.2f}",
                    "fill": f"rgb({level},{level},{level})",
                })

    def _add_contours(self, root: ET.Element, grid: SPMGrid, grid_contours: List[Contour]):
        layer = ET.SubElement(root, f"{{{SVG_NS}}}g", {"id": "contours", "fill": "none", "stroke-width": "2"})
        levels = sorted({c.level for c in grid_contours})
        for contour in grid_contours:
            xs = self._px(grid, contour.vertices[:, 0])
            ys = self._py(grid, contour.vertices[:, 1])
            points = " L ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
            color = self.contour_colors[levels.index(contour.level) % len(self.contour_colors)]
            ET.SubElement(layer, f"{{{SVG_NS}}}path", {
                "d": f"M {points}", "stroke": color, "data-level": f"{contour.level:g}",
            })

    def _add_od50_marker(self, root: ET.Element, grid: SPMGrid, marker: Sequence[Tuple[float, float]]):
        xs = self._px(grid, [d for d, _ in marker])
        ys = self._py(grid, [y for _, y in marker])
        ET.SubElement(root, f"{{{SVG_NS}}}polyline", {
            "id": "od50", "fill": "none", "stroke": "#ffd700", "stroke-width": "2",
            "stroke-dasharray": "6,4",
            "points": " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys)),
        })

    def _add_axes(self, root: ET.Element, grid: SPMGrid):
        left, top, plot_w, plot_h = self._plot_box()
        bottom = top + plot_h
        layer = ET.SubElement(root, f"{{{SVG_NS}}}g", {
            "id": "axes", "stroke": "black", "font-family": "sans-serif", "font-size": "11",
        })
        ET.SubElement(layer, f"{{{SVG_NS}}}rect", {
            "x": f"{left:.2f}", "y": f"{top:.2f}", "width": f"{plot_w:.2f}", "height": f"{plot_h:.2f}",
            "fill": "none",
        })
        for distance, x in zip(grid.x_axis, self._px(grid, grid.x_axis)):
            ET.SubElement(layer, f"{{{SVG_NS}}}line", {
                "x1": f"{x:.2f}", "y1": f"{bottom:.2f}", "x2": f"{x:.2f}", "y2": f"{bottom + 5:.2f}",
            })
            label = ET.SubElement(layer, f"{{{SVG_NS}}}text", {
                "x": f"{x:.2f}", "y": f"{bottom + 18:.2f}", "text-anchor": "middle", "stroke": "none",
            })
            label.text = f"{distance:g}"
        for value, y in zip(grid.y_axis, self._py(grid, grid.y_axis)):
            ET.SubElement(layer, f"{{{SVG_NS}}}line", {
                "x1": f"{left - 5:.2f}", "y1": f"{y:.2f}", "x2": f"{left:.2f}", "y2": f"{y:.2f}",
            })
            label = ET.SubElement(layer, f"{{{SVG_NS}}}text", {
                "x": f"{left - 8:.2f}", "y": f"{y + 4:.2f}", "text-anchor": "end", "stroke": "none",
            })
            label.text = f"{value:.3g}"

        x_title = ET.SubElement(layer, f"{{{SVG_NS}}}text", {
            "x": f"{left + plot_w / 2:.2f}", "y": f"{self.height - 10:.2f}", "text-anchor": "middle",
            "stroke": "none",
        })
        x_title.text = "Object distance (m)"
        y_title = ET.SubElement(layer, f"{{{SVG_NS}}}text", {
            "x": "15", "y": f"{top + plot_h / 2:.2f}", "text-anchor": "middle", "stroke": "none",
            "transform": f"rotate(-90 15 {top + plot_h / 2:.2f})",
        })
        y_title.text = AXIS_TITLES.get(grid.axis, grid.axis)

"""
System Performance Maps: AP over (camera property, distance) lattices, densified by
bilinear interpolation, with iso-AP contours from marching squares.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.interpolate import RegularGridInterpolator
from skimage import measure

from engines.metrics import APCurve
from utils.error_handler import DegenerateGridError, DomainError, FormatError

logger = logging.getLogger(__name__)

AXIS_LABELS = {"mtf50": "mtf50_cyc_per_mm", "lux": "illuminance_lux"}
LOG_AXIS_DECADES = 2.0
DEFAULT_RESOLUTION = 64


@dataclass(frozen=True)
class Contour:
    level: float
    vertices: np.ndarray  # (n, 2) columns: distance m, y value


@dataclass(eq=False)
class SPMGrid:
    """AP lattice (rows: y values ascending, columns: distances) and its dense interpolation"""
    axis: str
    y_axis: np.ndarray
    x_axis: np.ndarray
    values: np.ndarray
    multiplicity: np.ndarray
    samples: List[Tuple[float, float, float]]
    log_y: bool
    dense_y: np.ndarray = field(repr=False)
    dense_x: np.ndarray = field(repr=False)
    dense: np.ndarray = field(repr=False)

    @property
    def y_label(self) -> str:
        return AXIS_LABELS.get(self.axis, self.axis)

    def _y_coordinate(self, y):
        y = np.asarray(y, dtype=np.float64)
        return np.log10(y) if self.log_y else y

    def _interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator((self._y_coordinate(self.dense_y), self.dense_x), self.dense,
                                       method="linear", bounds_error=False, fill_value=np.nan)

    def evaluate(self, y, x) -> np.ndarray:
        """Bilinear AP on the dense grid; NaN outside the lattice"""
        y, x = np.broadcast_arrays(np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64))
        points = np.stack([self._y_coordinate(y).ravel(), x.ravel()], axis=-1)
        return self._interpolator()(points).reshape(y.shape)

    def index_to_axes(self, rows: np.ndarray, cols: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Fractional dense-grid indices to (y, distance) in axis units"""
        x = np.interp(cols, np.arange(self.dense_x.size), self.dense_x)
        y = np.interp(rows, np.arange(self.dense_y.size), self._y_coordinate(self.dense_y))
        return (10.0 ** y if self.log_y else y), x


def _dense_axis(nodes: np.ndarray, resolution: int, log: bool) -> np.ndarray:
    if log:
        spaced = np.logspace(math.log10(nodes[0]), math.log10(nodes[-1]), resolution)
    else:
        spaced = np.linspace(nodes[0], nodes[-1], resolution)
    # Lattice nodes stay bit-exact; spaced points at or near a node are dropped.
    spaced = spaced[(spaced > nodes[0]) & (spaced < nodes[-1])]
    near = np.isclose(spaced[:, None], nodes[None, :], rtol=1e-9, atol=0).any(axis=1)
    return np.union1d(nodes, spaced[~near])


def build_grid(curves: Sequence[Tuple[float, APCurve]], resolution: int = DEFAULT_RESOLUTION,
               axis: str = "mtf50", merge_tolerance: float = 1e-9) -> SPMGrid:
    """Lattice from (y, curve) pairs; curves whose y values agree within merge_tolerance share a row"""
    if axis not in AXIS_LABELS:
        raise DomainError(f"Unknown SPM axis '{axis}'", details={"axes": list(AXIS_LABELS)})
    if resolution < 2:
        raise DomainError(f"Resolution must be at least 2, got {resolution}")
    if not curves:
        raise DegenerateGridError("No curves to place on the grid")

    distances = np.asarray(curves[0][1].distances, dtype=np.float64)
    samples = []
    for y, curve in curves:
        if not np.array_equal(np.asarray(curve.distances, dtype=np.float64), distances):
            raise DegenerateGridError(
                f"Curve {curve.camera_id}/{curve.condition} has distances {list(curve.distances)}, "
                f"expected {list(distances)}"
            )
        if not math.isfinite(y) or y <= 0:
            raise DomainError(f"Grid y value must be positive and finite, got {y}")
        samples.extend((float(y), float(d), float(ap)) for d, ap in zip(curve.distances, curve.ap))

    rows: List[List[Tuple[float, np.ndarray]]] = []
    for y, curve in sorted(curves, key=lambda item: item[0]):
        if rows and abs(y - rows[-1][0][0]) <= merge_tolerance * max(abs(y), 1.0):
            rows[-1].append((y, curve.ap))
        else:
            rows.append([(y, curve.ap)])

    if len(rows) < 2 or distances.size < 2:
        raise DegenerateGridError(f"SPM needs at least 2 rows and 2 columns, got {len(rows)}x{distances.size}")
    if np.any(np.diff(distances) <= 0):
        raise DegenerateGridError("Distances must be strictly increasing")

    y_axis = np.array([np.mean([y for y, _ in row]) for row in rows])
    values = np.array([np.mean([ap for _, ap in row], axis=0) for row in rows])
    multiplicity = np.array([len(row) for row in rows])
    if np.any((values < 0) | (values > 1)):
        raise DomainError("AP values must lie in [0, 1]")

    log_y = axis == "lux" and math.log10(y_axis[-1] / y_axis[0]) >= LOG_AXIS_DECADES
    dense_y = _dense_axis(y_axis, resolution, log_y)
    dense_x = _dense_axis(distances, resolution, False)

    lattice = RegularGridInterpolator((np.log10(y_axis) if log_y else y_axis, distances), values, method="linear")
    yy, xx = np.meshgrid(np.log10(dense_y) if log_y else dense_y, dense_x, indexing="ij")
    dense = lattice(np.stack([yy.ravel(), xx.ravel()], axis=-1)).reshape(yy.shape)

    # Exact lattice values at the nodes
    row_nodes = np.searchsorted(dense_y, y_axis)
    col_nodes = np.searchsorted(dense_x, distances)
    dense[np.ix_(row_nodes, col_nodes)] = values

    merged = int((multiplicity > 1).sum())
    if merged:
        logger.info(f"{merged} SPM row(s) average cameras sharing a {axis} value")
    logger.debug(f"SPM lattice {values.shape}, dense {dense.shape}, log y: {log_y}")
    return SPMGrid(axis, y_axis, distances, values, multiplicity, samples, log_y, dense_y, dense_x, dense)


def contours(grid: SPMGrid, levels: Sequence[float]) -> List[Contour]:
    """Iso-AP polylines on the dense grid, vertices in (distance, y) axis units"""
    result = []
    for level in levels:
        if not 0.0 < level < 1.0:
            raise DomainError(f"Contour level must lie in (0, 1), got {level}")
        for path in measure.find_contours(grid.dense, level):
            y, x = grid.index_to_axes(path[:, 0], path[:, 1])
            result.append(Contour(float(level), np.column_stack([x, y])))
    logger.debug(f"{len(result)} contour polylines at levels {list(levels)}")
    return result


def grid_frame(grid: SPMGrid, which: str = "lattice") -> pd.DataFrame:
    """Header row of distances, first column of y values, AP cells"""
    if which == "lattice":
        y, x, values = grid.y_axis, grid.x_axis, grid.values
    elif which == "dense":
        y, x, values = grid.dense_y, grid.dense_x, grid.dense
    else:
        raise DomainError(f"Unknown grid selection '{which}'")
    frame = pd.DataFrame(values, columns=[f"{d:.17g}" for d in x])
    frame.insert(0, grid.y_label, y)
    return frame


def emit_csv(grid: SPMGrid, path: Union[str, Path], which: str = "lattice"):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    grid_frame(grid, which).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_grid_csv(path: Union[str, Path]) -> Tuple[str, np.ndarray, np.ndarray, np.ndarray]:
    """(y label, y values, distances, AP matrix) from an emitted grid CSV"""
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
        distances = np.array([float(c) for c in frame.columns[1:]])
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        raise FormatError(f"Unreadable SPM grid {path}: {e}", details={"path": str(path)})
    return str(frame.columns[0]), frame.iloc[:, 0].to_numpy(dtype=np.float64), distances, \
        frame.iloc[:, 1:].to_numpy(dtype=np.float64)


def emit(grid: SPMGrid, grid_contours: List[Contour], fmt: str, path: Union[str, Path],
         which: str = "lattice", od50_marker: Optional[Sequence[Tuple[float, float]]] = None, **svg_options):
    """Write the grid as CSV or as an SVG map with contours"""
    if fmt == "csv":
        emit_csv(grid, path, which)
    elif fmt == "svg":
        from generators.svg_generator import SVGGenerator
        SVGGenerator(**svg_options).write(grid, grid_contours, path, od50_marker)
    else:
        raise DomainError(f"Unknown SPM output format '{fmt}'")
    logger.info(f"Wrote SPM {fmt} to {path}")


def od50_marker_points(grid: SPMGrid, od50_by_y: Dict[float, float]) -> List[Tuple[float, float]]:
    """(distance, y) points of interpolated OD50s that fall inside the map"""
    points = [(d, y) for y, d in sorted(od50_by_y.items())
              if grid.x_axis[0] <= d <= grid.x_axis[-1] and grid.y_axis[0] <= y <= grid.y_axis[-1]]
    return points

"""
Minimal raw-to-display pipeline: black level, bilinear demosaic, white balance, gamma.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from engines.sensor import RawImage, cfa_channel_map
from utils.error_handler import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 2.2
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

_G_KERNEL = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64)
_RB_KERNEL = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class RGBImage:
    """8-bit display image handed to detectors"""
    rgb: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)
    origin: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        rgb = np.asarray(self.rgb)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ConfigurationError(f"RGB image must be (rows, cols, 3), got {rgb.shape}")
        rgb = np.clip(rgb, 0, 255).astype(np.uint8)
        rgb.flags.writeable = False
        object.__setattr__(self, "rgb", rgb)

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


def normalize_raw(raw: RawImage) -> np.ndarray:
    """Black-level subtracted mosaic scaled so full scale is 1.0"""
    span = float(2 ** raw.bit_depth - 1 - raw.black_level)
    return (raw.dn.astype(np.float64) - raw.black_level) / span


def demosaic(raw: RawImage) -> np.ndarray:
    """Bilinear demosaic to linear RGB (rows, cols, 3).

    Each channel is a normalized convolution of its masked samples, so borders use
    the mirrored neighbourhood with the same CFA phase. Measured samples are kept as is.
    """
    mosaic = normalize_raw(raw)
    channel = cfa_channel_map(raw.cfa_pattern, raw.height, raw.width, raw.origin)
    out = np.empty(mosaic.shape + (3,), dtype=np.float64)
    for c, kernel in enumerate((_RB_KERNEL, _G_KERNEL, _RB_KERNEL)):
        mask = (channel == c).astype(np.float64)
        # "mirror" maps index -1 to 1, keeping the CFA phase; "reflect" would map it to 0
        weighted = ndimage.convolve(mosaic * mask, kernel, mode="mirror")
        support = ndimage.convolve(mask, kernel, mode="mirror")
        plane = weighted / support
        out[..., c] = np.where(mask > 0, mosaic, plane)
    return out


def gray_world_gains(linear_rgb: np.ndarray) -> np.ndarray:
    """Per-channel gains equalizing channel means; 1.0 for an empty channel"""
    means = linear_rgb.reshape(-1, 3).mean(axis=0)
    overall = means.mean()
    gains = np.ones(3)
    lit = means > 0
    gains[lit] = overall / means[lit]
    return gains


def render_display(linear_rgb: np.ndarray, color_matrix: Optional[np.ndarray] = None,
                   gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Color matrix, clip, gamma and 8-bit quantization; default matrix is gray-world white balance"""
    if gamma <= 0:
        raise ConfigurationError(f"Gamma must be positive, got {gamma}")
    if color_matrix is None:
        matrix = np.diag(gray_world_gains(linear_rgb))
    else:
        matrix = np.asarray(color_matrix, dtype=np.float64)
        if matrix.shape != (3, 3):
            raise ConfigurationError(f"Color matrix must be 3x3, got {matrix.shape}")
    if not np.all(np.isfinite(matrix)) or np.linalg.matrix_rank(matrix) < 3:
        raise ConfigurationError("Color matrix is singular")

    corrected = np.clip(linear_rgb @ matrix.T, 0.0, 1.0)
    encoded = corrected ** (1.0 / gamma)
    return np.round(255.0 * encoded).astype(np.uint8)


def process(raw: RawImage, gamma: float = DEFAULT_GAMMA, color_matrix: Optional[np.ndarray] = None,
            metadata: Optional[Dict[str, Any]] = None) -> RGBImage:
    """Raw mosaic to display RGB"""
    linear = demosaic(raw)
    rgb = render_display(linear, color_matrix, gamma)
    meta = {"exposure_time_s": float(raw.exposure_time)}
    meta.update(metadata or {})
    return RGBImage(rgb, meta, raw.origin)


def to_luma(rgb: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of an RGB array (same scale as the input)"""
    return np.asarray(rgb, dtype=np.float64) @ LUMA_WEIGHTS

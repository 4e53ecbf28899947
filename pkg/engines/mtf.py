"""
System MTF50 of a camera: slanted-edge measurement through the full pipeline,
or the analytic diffraction x pixel-aperture product.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import optimize

from engines.isp import LUMA_WEIGHTS, demosaic, normalize_raw
from engines.optics import apply_optics, cutoff_frequency, diffraction_otf
from engines.sensor import ExposurePolicy, auto_exposure, capture, cfa_channel_map
from engines.spectral import d65_spd
from generators.scene_generator import RenderConfig, auto_supersample, generate_slanted_edge
from utils.error_handler import ConfigurationError, MetricError
from utils.monitoring import performance_monitor, twin_logger

logger = logging.getLogger(__name__)

MTF_MODES = ("slanted_edge", "analytic")
MTF_CHANNELS = ("luma", "green", "raw")

EDGE_SIZE_PX = 64
EDGE_SUPERSAMPLE = 8
EDGE_ANGLE_DEG = 5.0
EDGE_BORDER_PX = 4
OVERSAMPLING = 4
MID_RANGE_FRACTION = 0.5
# Bright enough that every grid camera reaches mid-range below the exposure cap
EDGE_LUX = 5e4
MTF50_COLUMNS = ("camera_id", "mtf50_cyc_per_mm", "extrapolated", "mode", "channel")


@dataclass
class MTFResult:
    camera_id: str
    mtf50: float                     # cycles/mm
    extrapolated: bool
    mode: str
    channel: str
    frequencies: np.ndarray = field(repr=False)  # cycles/mm
    mtf: np.ndarray = field(repr=False)
    edge_angle_deg: Optional[float] = None
    exposure_time_s: Optional[float] = None

    def to_row(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "mtf50_cyc_per_mm": float(self.mtf50),
            "extrapolated": bool(self.extrapolated),
            "mode": self.mode,
            "channel": self.channel,
        }


def edge_image(raw, channel: str) -> np.ndarray:
    """Linear single-plane image of a captured edge for the chosen channel"""
    if channel == "luma":
        return demosaic(raw) @ LUMA_WEIGHTS
    if channel == "green":
        return demosaic(raw)[..., 1]
    if channel == "raw":
        # Each CFA channel divided by its own mean: a gray mosaic with no interpolation.
        mosaic = normalize_raw(raw)
        cfa = cfa_channel_map(raw.cfa_pattern, raw.height, raw.width, raw.origin)
        out = np.empty_like(mosaic)
        for c in range(3):
            samples = cfa == c
            mean = mosaic[samples].mean()
            out[samples] = mosaic[samples] / mean if mean > 0 else 0.0
        return out
    raise ConfigurationError(f"Unknown MTF channel '{channel}'", details={"channels": list(MTF_CHANNELS)})


def _edge_fit(image: np.ndarray) -> Tuple[float, float]:
    """Edge column per row from the centroid of the row derivative, fitted as col = slope*row + offset"""
    rows, cols = image.shape
    derivative = np.abs(np.diff(image, axis=1))
    weight = derivative.sum(axis=1)
    valid = weight > 0
    if valid.sum() < 2:
        raise MetricError("No edge found in the slanted-edge image")
    positions = np.arange(cols - 1) + 0.5
    centroids = (derivative[valid] * positions).sum(axis=1) / weight[valid]
    slope, offset = np.polyfit(np.arange(rows)[valid], centroids, 1)
    return float(slope), float(offset)


def edge_spread(image: np.ndarray, oversampling: int = OVERSAMPLING) -> Tuple[np.ndarray, float, float]:
    """Oversampled edge-spread function binned by perpendicular distance from the fitted edge"""
    rows, cols = image.shape
    slope, offset = _edge_fit(image)
    edge_cols = slope * np.arange(rows) + offset
    half = int(math.floor(min(edge_cols.min(), cols - 1 - edge_cols.max()))) - 1
    if half < 4:
        raise MetricError(f"Edge too close to the image border ({half} px of support)")

    cos_theta = math.cos(math.atan(slope))
    rr, cc = np.mgrid[0:rows, 0:cols]
    distance = (cc - (slope * rr + offset)) * cos_theta
    index = np.floor(distance * oversampling).astype(np.int64) + half * oversampling
    n_bins = 2 * half * oversampling
    inside = (index >= 0) & (index < n_bins)

    sums = np.bincount(index[inside], weights=image[inside], minlength=n_bins)
    counts = np.bincount(index[inside], minlength=n_bins)
    filled = counts > 0
    centers = np.arange(n_bins)
    esf = np.interp(centers, centers[filled], sums[filled] / counts[filled])
    return esf, slope, math.degrees(math.atan(slope))


def mtf_from_esf(esf: np.ndarray, oversampling: int = OVERSAMPLING) -> Tuple[np.ndarray, np.ndarray]:
    """(frequency cycles/px, MTF) from an oversampled ESF: derivative, Hamming window, FFT"""
    step = 1.0 / oversampling
    lsf = np.gradient(esf)
    if lsf.sum() < 0:
        lsf = -lsf
    lsf = lsf * np.hamming(lsf.size)
    spectrum = np.abs(np.fft.rfft(lsf))
    if spectrum[0] <= 0:
        raise MetricError("Line-spread function has no energy")
    frequencies = np.fft.rfftfreq(lsf.size, d=step)
    # central difference over two bins
    correction = np.sinc(2.0 * frequencies * step)
    usable = correction > 0.1
    mtf = spectrum[usable] / spectrum[0] / correction[usable]
    return frequencies[usable], mtf


def half_crossing(frequencies: np.ndarray, mtf: np.ndarray, nyquist: float) -> Tuple[float, bool]:
    """First 0.5 crossing by linear interpolation; flagged when beyond Nyquist or extrapolated"""
    below = np.nonzero(mtf < 0.5)[0]
    if below.size and below[0] > 0:
        k = int(below[0])
        f0, f1 = frequencies[k - 1], frequencies[k]
        m0, m1 = mtf[k - 1], mtf[k]
        crossing = f0 + (f1 - f0) * (m0 - 0.5) / (m0 - m1)
        return float(crossing), bool(crossing > nyquist)
    if frequencies.size < 2 or mtf[-1] == mtf[-2]:
        raise MetricError("MTF curve never reaches 0.5 and cannot be extrapolated")
    f0, f1 = frequencies[-2], frequencies[-1]
    m0, m1 = mtf[-2], mtf[-1]
    return float(f1 + (f1 - f0) * (m1 - 0.5) / (m0 - m1)), True


def edge_render_config(camera, wave_step_nm: float = 10.0, supersample: int = EDGE_SUPERSAMPLE) -> RenderConfig:
    needed = auto_supersample(camera.sensor.pixel_size_um, camera.optics.f_number)
    return RenderConfig(
        focal_length_mm=camera.optics.focal_length_mm,
        pixel_size_um=camera.sensor.pixel_size_um,
        supersample=max(supersample, needed),
        wave_step_nm=wave_step_nm,
    )


def slanted_edge_mtf50(camera, channel: str = "luma", wave_step_nm: float = 10.0,
                       size_px: int = EDGE_SIZE_PX, angle_deg: float = EDGE_ANGLE_DEG) -> MTFResult:
    """Noise-free edge through optics, sensor and demosaic, exposed to half the voltage swing"""
    render = edge_render_config(camera, wave_step_nm)
    scene = generate_slanted_edge(render, size_px=size_px, angle_deg=angle_deg, lux=EDGE_LUX)
    irradiance = apply_optics(scene, camera.optics).irradiance

    policy = ExposurePolicy(target_fraction=MID_RANGE_FRACTION, central_fraction=1.0,
                            max_exposure_s=camera.policy.max_exposure_s)
    exposure = auto_exposure(irradiance, camera.sensor, policy)
    raw = capture(irradiance, camera.sensor, exposure, seed=0, noise=False)

    image = edge_image(raw, channel)[EDGE_BORDER_PX:-EDGE_BORDER_PX, EDGE_BORDER_PX:-EDGE_BORDER_PX]
    esf, _, measured_angle = edge_spread(image)
    freq_px, mtf = mtf_from_esf(esf)

    pitch = camera.sensor.pixel_pitch_mm
    mtf50_px, extrapolated = half_crossing(freq_px, mtf, nyquist=0.5)
    return MTFResult(camera.id, mtf50_px / pitch, extrapolated, "slanted_edge", channel,
                     freq_px / pitch, mtf, measured_angle, exposure)


def spectral_weights(camera, wavelengths_nm: np.ndarray) -> np.ndarray:
    """Photon-count weights of a D65 edge seen through the luma-weighted channel responses"""
    qe = camera.sensor.qe_matrix(wavelengths_nm)
    weights = d65_spd(wavelengths_nm).power * wavelengths_nm * (LUMA_WEIGHTS @ qe)
    return weights / weights.sum()


def analytic_mtf(camera, frequencies, wavelengths_nm: Optional[np.ndarray] = None) -> np.ndarray:
    """Spectrally weighted diffraction MTF times the pixel-aperture sinc"""
    wavelengths_nm = np.arange(400.0, 701.0, 10.0) if wavelengths_nm is None else np.asarray(wavelengths_nm)
    f = np.atleast_1d(np.asarray(frequencies, dtype=np.float64))
    weights = spectral_weights(camera, wavelengths_nm)
    optics = sum(w * diffraction_otf(f, wl, camera.optics.f_number) for w, wl in zip(weights, wavelengths_nm))
    aperture = camera.sensor.pixel_pitch_mm * math.sqrt(camera.sensor.fill_factor)
    return optics * np.abs(np.sinc(f * aperture))


def analytic_mtf50(camera) -> MTFResult:
    wavelengths = np.arange(400.0, 701.0, 10.0)
    pitch = camera.sensor.pixel_pitch_mm
    upper = float(min(cutoff_frequency(wavelengths.min(), camera.optics.f_number),
                      1.0 / (pitch * math.sqrt(camera.sensor.fill_factor))))
    mtf50 = optimize.brentq(lambda f: analytic_mtf(camera, f, wavelengths)[0] - 0.5, 0.0, upper, xtol=1e-9)
    frequencies = np.linspace(0.0, upper, 257)
    return MTFResult(camera.id, float(mtf50), bool(mtf50 > 0.5 / pitch), "analytic", "luma",
                     frequencies, analytic_mtf(camera, frequencies, wavelengths))


def mean_wavelength_nm(camera, wavelengths_nm: Optional[np.ndarray] = None) -> float:
    wavelengths_nm = np.arange(400.0, 701.0, 10.0) if wavelengths_nm is None else np.asarray(wavelengths_nm)
    return float(np.dot(spectral_weights(camera, wavelengths_nm), wavelengths_nm))


@performance_monitor("measure_mtf50")
def measure_mtf50(camera, mode: str = "slanted_edge", channel: str = "luma", wave_step_nm: float = 10.0) -> MTFResult:
    """MTF50 in cycles/mm; deterministic because capture runs noise-free"""
    if mode not in MTF_MODES:
        raise ConfigurationError(f"Unknown MTF mode '{mode}'", details={"modes": list(MTF_MODES)})
    if channel not in MTF_CHANNELS:
        raise ConfigurationError(f"Unknown MTF channel '{channel}'", details={"channels": list(MTF_CHANNELS)})
    if mode == "analytic":
        result = analytic_mtf50(camera)
    else:
        result = slanted_edge_mtf50(camera, channel, wave_step_nm)
    if result.extrapolated:
        logger.warning(f"{camera.id}: MTF50 {result.mtf50:.1f} cycles/mm lies beyond Nyquist or was extrapolated")
    twin_logger.log_stage("mtf50_measured", {"camera_id": camera.id, "mode": mode, "channel": result.channel,
                                             "mtf50": result.mtf50, "extrapolated": result.extrapolated})
    return result

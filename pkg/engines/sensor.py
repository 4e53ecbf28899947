"""
Image sensor model: pixel integration through a Bayer CFA, auto-exposure,
shot/dark/read noise and ADC quantization.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from engines.spectral import IRRADIANCE, LIGHT_C, PLANCK_H, SpectralImage
from utils.error_handler import ConfigurationError, DomainError, FormatError, SamplingError, UnitError
from utils.monitoring import performance_monitor

logger = logging.getLogger(__name__)

MAX_EXPOSURE_S = 0.016
CFA_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")
CHANNELS = "RGB"
GAUSSIAN_APPROX_MEAN = 1e4
QE_COLUMNS = ("wavelength_nm", "qe_r", "qe_g", "qe_b")

# Default QE: Gaussian channels, peak 0.6
DEFAULT_QE_PEAK = 0.6
DEFAULT_QE_CENTERS_NM = (600.0, 530.0, 470.0)
DEFAULT_QE_SIGMA_NM = 50.0


class QECurves(BaseModel):
    """Tabulated per-channel quantum efficiency"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    wavelengths_nm: List[float]
    r: List[float]
    g: List[float]
    b: List[float]

    @model_validator(mode="after")
    def _check_table(self):
        n = len(self.wavelengths_nm)
        if n < 2 or not (len(self.r) == len(self.g) == len(self.b) == n):
            raise ValueError("QE table needs >= 2 rows and equal-length columns")
        if np.any(np.diff(self.wavelengths_nm) <= 0):
            raise ValueError("QE wavelengths must be strictly increasing")
        values = np.array([self.r, self.g, self.b])
        if np.any(values < 0) or np.any(values > 1):
            raise ValueError("QE values must lie in [0, 1]")
        return self


class SensorConfig(BaseModel):
    """IMX363-like pixel array; electrical defaults are assumed values"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    pixel_size_um: float = Field(1.4, gt=0)
    die_width_mm: float = Field(5.64, gt=0)
    die_height_mm: float = Field(4.23, gt=0)
    fill_factor: float = Field(1.0, gt=0, le=1)
    qe: Optional[QECurves] = None
    cfa_pattern: str = "RGGB"
    well_capacity: float = Field(6000.0, gt=0)
    conversion_gain: Optional[float] = Field(None, gt=0)  # V/e-, defaults to swing / well
    voltage_swing: float = Field(1.0, gt=0)
    read_noise: float = Field(1.5, ge=0)
    dark_current: float = Field(0.1, ge=0)
    black_level: int = Field(64, ge=0)
    bit_depth: int = Field(10, ge=2, le=16)
    analog_gain: float = Field(1.0, gt=0)

    @field_validator("cfa_pattern")
    @classmethod
    def _known_cfa(cls, value: str) -> str:
        value = value.upper()
        if value not in CFA_PATTERNS:
            raise ValueError(f"Unknown CFA pattern '{value}', expected one of {CFA_PATTERNS}")
        return value

    @model_validator(mode="after")
    def _check_electrical(self):
        if self.gain_v_per_e * self.well_capacity > self.voltage_swing * (1 + 1e-12):
            raise ValueError("well_capacity * conversion_gain must not exceed voltage_swing")
        if self.black_level >= self.full_scale:
            raise ValueError("black_level must be below the ADC full scale")
        return self

    @property
    def gain_v_per_e(self) -> float:
        return self.conversion_gain if self.conversion_gain is not None else self.voltage_swing / self.well_capacity

    @property
    def full_scale(self) -> int:
        return 2 ** self.bit_depth - 1

    @property
    def pixel_pitch_mm(self) -> float:
        return self.pixel_size_um * 1e-3

    @property
    def resolution(self) -> Tuple[int, int]:
        """(rows, cols) = floor(die / pixel)"""
        rows = int(math.floor(self.die_height_mm / self.pixel_pitch_mm + 1e-9))
        cols = int(math.floor(self.die_width_mm / self.pixel_pitch_mm + 1e-9))
        return rows, cols

    def qe_matrix(self, wavelengths_nm) -> np.ndarray:
        """(3, n_wave) QE in R, G, B order on the given grid"""
        wl = np.asarray(wavelengths_nm, dtype=np.float64)
        if self.qe is None:
            centers = np.asarray(DEFAULT_QE_CENTERS_NM)[:, None]
            return DEFAULT_QE_PEAK * np.exp(-0.5 * ((wl[None, :] - centers) / DEFAULT_QE_SIGMA_NM) ** 2)
        table = self.qe
        return np.stack([
            np.interp(wl, table.wavelengths_nm, column, left=0.0, right=0.0)
            for column in (table.r, table.g, table.b)
        ])


class ExposurePolicy(BaseModel):
    """Single exposure putting the central-region peak at a fraction of the voltage swing"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    target_fraction: float = Field(0.90, gt=0, lt=1)
    max_exposure_s: float = Field(MAX_EXPOSURE_S, gt=0, le=MAX_EXPOSURE_S)
    central_fraction: float = Field(1.0 / 3.0, gt=0, le=1)
    probe_exposure_s: float = Field(1e-3, gt=0)


@dataclass(frozen=True, eq=False)
class RawImage:
    """Quantized CFA mosaic"""
    dn: np.ndarray
    cfa_pattern: str
    bit_depth: int
    black_level: int
    exposure_time: float
    saturated_fraction: float
    origin: Tuple[int, int] = (0, 0)  # (row, col) of dn[0, 0] on the full sensor

    def __post_init__(self):
        dn = np.asarray(self.dn)
        if dn.ndim != 2:
            raise DomainError(f"Raw image must be 2-D, got shape {dn.shape}")
        if dn.size and (dn.min() < 0 or dn.max() > 2 ** self.bit_depth - 1):
            raise DomainError("Raw values outside the ADC range")
        if not 0 < self.exposure_time <= MAX_EXPOSURE_S:
            raise DomainError(f"Exposure time {self.exposure_time} s outside (0, {MAX_EXPOSURE_S}]")
        dn = dn.astype(np.uint16)
        dn.flags.writeable = False
        object.__setattr__(self, "dn", dn)

    @property
    def height(self) -> int:
        return self.dn.shape[0]

    @property
    def width(self) -> int:
        return self.dn.shape[1]

    def sidecar(self) -> dict:
        return {
            "exposure_time_s": float(self.exposure_time),
            "cfa": self.cfa_pattern,
            "bit_depth": int(self.bit_depth),
            "black_level": int(self.black_level),
            "saturated_fraction": float(self.saturated_fraction),
            "origin": [int(self.origin[0]), int(self.origin[1])],
        }


def cfa_channel_map(pattern: str, rows: int, cols: int, origin: Tuple[int, int] = (0, 0)) -> np.ndarray:
    """Channel index (0=R, 1=G, 2=B) of every pixel; phase follows the full-sensor origin"""
    if pattern not in CFA_PATTERNS:
        raise ConfigurationError(f"Unknown CFA pattern '{pattern}'")
    tile = np.array([CHANNELS.index(c) for c in pattern]).reshape(2, 2)
    r = (np.arange(rows) + origin[0]) % 2
    c = (np.arange(cols) + origin[1]) % 2
    return tile[r[:, None], c[None, :]]


def _supersample_factor(irradiance: SpectralImage, sensor: SensorConfig) -> int:
    ratio = sensor.pixel_pitch_mm / irradiance.sample_pitch
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-6 * ratio:
        raise SamplingError(
            f"Sample pitch {irradiance.sample_pitch} mm does not divide pixel pitch {sensor.pixel_pitch_mm} mm",
            details={"ratio": ratio},
        )
    if irradiance.height % factor or irradiance.width % factor:
        raise SamplingError(
            f"Grid {irradiance.height}x{irradiance.width} is not a whole number of {factor}x{factor} pixel blocks"
        )
    return factor


def photon_weights(irradiance: SpectralImage, sensor: SensorConfig) -> np.ndarray:
    """(3, n_wave) electrons per second per (W m^-2 nm^-1) for each channel and band"""
    wl = irradiance.wavelengths
    area_m2 = (sensor.pixel_size_um * 1e-6) ** 2
    per_photon = wl * 1e-9 / (PLANCK_H * LIGHT_C)
    return sensor.fill_factor * area_m2 * sensor.qe_matrix(wl) * per_photon[None, :] * irradiance.wave_step


def expected_electrons(irradiance: SpectralImage, sensor: SensorConfig, exposure_time: float,
                       origin: Tuple[int, int] = (0, 0)) -> np.ndarray:
    """Mean photoelectrons per pixel for the pixel's own CFA channel"""
    if irradiance.unit_tag != IRRADIANCE:
        raise UnitError(f"Sensor integration expects irradiance, got {irradiance.unit_tag}")
    if exposure_time <= 0:
        raise DomainError(f"Exposure time must be positive, got {exposure_time}")
    s = _supersample_factor(irradiance, sensor)
    bands, height, width = irradiance.values.shape
    rows, cols = height // s, width // s
    pixel_mean = irradiance.values.reshape(bands, rows, s, cols, s).mean(axis=(2, 4))

    per_channel = np.tensordot(photon_weights(irradiance, sensor), pixel_mean, axes=(1, 0))
    channel = cfa_channel_map(sensor.cfa_pattern, rows, cols, origin)
    electrons = np.take_along_axis(per_channel, channel[None], axis=0)[0]
    return electrons * exposure_time


def expected_voltage(irradiance: SpectralImage, sensor: SensorConfig, exposure_time: float,
                     origin: Tuple[int, int] = (0, 0)) -> np.ndarray:
    """Noise-free, unclipped pixel voltage including the dark-current mean"""
    mean_e = expected_electrons(irradiance, sensor, exposure_time, origin) + sensor.dark_current * exposure_time
    return mean_e * sensor.gain_v_per_e * sensor.analog_gain


def central_window(shape: Tuple[int, int], fraction: float) -> Tuple[slice, slice]:
    rows, cols = shape
    h = max(1, int(round(rows * fraction)))
    w = max(1, int(round(cols * fraction)))
    r0 = int(round(rows * (1 - fraction) / 2))
    c0 = int(round(cols * (1 - fraction) / 2))
    return slice(r0, r0 + h), slice(c0, c0 + w)


def auto_exposure(irradiance: SpectralImage, sensor: SensorConfig, policy: ExposurePolicy = None,
                  origin: Tuple[int, int] = (0, 0),
                  window: Optional[Tuple[slice, slice]] = None) -> float:
    """Exposure time putting the noise-free central peak at target_fraction of the swing.

    The probe frame is linear and unclipped, so one probe fixes the answer. `window`
    overrides the central region (for crops of a larger frame).
    """
    policy = policy or ExposurePolicy()
    t0 = policy.probe_exposure_s
    voltage = expected_voltage(irradiance, sensor, t0, origin)
    rows, cols = window if window is not None else central_window(voltage.shape, policy.central_fraction)
    region = voltage[rows, cols]
    peak = float(region.max()) if region.size else 0.0
    if peak <= 0:
        logger.debug("Central region is dark; using the maximum exposure")
        return policy.max_exposure_s
    exposure = min(policy.max_exposure_s, t0 * policy.target_fraction * sensor.voltage_swing / peak)
    logger.debug(f"Auto-exposure: probe peak {peak:.4g} V at {t0 * 1e3:g} ms -> {exposure * 1e3:.4g} ms")
    return exposure


def _noisy_row(mean_row: np.ndarray, seed: int, row: int, read_sigma_e: float) -> Tuple[np.ndarray, np.ndarray]:
    # Draw order per row is fixed: Poisson, Gaussian for large means, read noise.
    rng = np.random.default_rng([seed, row])
    large = mean_row > GAUSSIAN_APPROX_MEAN
    electrons = rng.poisson(np.where(large, 0.0, mean_row)).astype(np.float64)
    normal = rng.normal(size=mean_row.shape)
    if large.any():
        approx = mean_row[large] + np.sqrt(mean_row[large]) * normal[large]
        electrons[large] = np.maximum(np.round(approx), 0.0)
    read = rng.normal(0.0, read_sigma_e, size=mean_row.shape) if read_sigma_e > 0 else np.zeros(mean_row.shape)
    return electrons, read


def _sample_rows(mean_e: np.ndarray, seed: int, read_sigma_e: float, workers: int):
    rows = mean_e.shape[0]
    electrons = np.empty(mean_e.shape, dtype=np.float64)
    read = np.empty(mean_e.shape, dtype=np.float64)

    def run(row_range):
        for row in row_range:
            electrons[row], read[row] = _noisy_row(mean_e[row], seed, row, read_sigma_e)

    workers = max(1, int(workers))
    if workers == 1 or rows < 2:
        run(range(rows))
    else:
        chunks = [range(start, rows, workers) for start in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, chunks))
    return electrons, read


def sample_electrons(mean_e: np.ndarray, sensor: SensorConfig, seed: int, workers: int = 1) -> np.ndarray:
    """Shot-noise electron counts drawn from the same per-row streams capture uses"""
    mean_e = np.asarray(mean_e, dtype=np.float64)
    if mean_e.ndim != 2 or np.any(mean_e < 0):
        raise DomainError("Mean electrons must be a nonnegative 2-D array")
    electrons, _ = _sample_rows(mean_e, seed, sensor.read_noise, workers)
    return electrons


@performance_monitor("capture")
def capture(irradiance: SpectralImage, sensor: SensorConfig, exposure_time: float, seed: int,
            origin: Tuple[int, int] = (0, 0), noise: bool = True, workers: int = 1) -> RawImage:
    """Integrate, add noise and quantize one frame; deterministic in (inputs, seed)"""
    mean_e = expected_electrons(irradiance, sensor, exposure_time, origin) + sensor.dark_current * exposure_time
    gain = sensor.gain_v_per_e * sensor.analog_gain

    if noise:
        electrons, read = _sample_rows(mean_e, seed, sensor.read_noise, workers)
    else:
        electrons, read = mean_e, np.zeros(mean_e.shape)

    full_well = electrons >= sensor.well_capacity
    electrons = np.minimum(electrons, sensor.well_capacity)
    voltage = np.minimum(sensor.voltage_swing, electrons * gain + read * gain)

    span = sensor.full_scale - sensor.black_level
    dn = np.clip(np.round(sensor.black_level + voltage / sensor.voltage_swing * span), 0, sensor.full_scale)
    saturated = full_well | (dn >= sensor.full_scale)

    raw = RawImage(dn.astype(np.uint16), sensor.cfa_pattern, sensor.bit_depth, sensor.black_level,
                   exposure_time, float(saturated.mean()), origin)
    logger.debug(f"Captured {raw.height}x{raw.width} at {exposure_time * 1e3:.4g} ms, "
                 f"saturated {raw.saturated_fraction:.4f}")
    return raw


def load_qe_csv(path: Union[str, Path]) -> QECurves:
    """Read wavelength_nm, qe_r, qe_g, qe_b columns"""
    try:
        table = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(f"Unreadable QE table {path}: {e}")
    missing = [column for column in QE_COLUMNS if column not in table.columns]
    if missing:
        raise FormatError(f"QE table {path} lacks columns {missing}")
    return QECurves(
        wavelengths_nm=table["wavelength_nm"].astype(float).tolist(),
        r=table["qe_r"].astype(float).tolist(),
        g=table["qe_g"].astype(float).tolist(),
        b=table["qe_b"].astype(float).tolist(),
    )


def save_qe_csv(sensor: SensorConfig, path: Union[str, Path], wavelengths_nm=None):
    """Write the sensor's QE curves, tabulated on its own grid or on wavelengths_nm"""
    if wavelengths_nm is None:
        wavelengths_nm = sensor.qe.wavelengths_nm if sensor.qe is not None else np.arange(400.0, 701.0, 10.0)
    wl = np.asarray(wavelengths_nm, dtype=np.float64)
    qe = sensor.qe_matrix(wl)
    frame = pd.DataFrame({"wavelength_nm": wl, "qe_r": qe[0], "qe_g": qe[1], "qe_b": qe[2]})
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

"""
Spectral image container, radiometry/photometry conversions and the .sif file format.

All spectral integrals use the rectangle rule at band centers. Scene illuminance
follows the Lambertian-equivalent convention: pi times the mean luminance.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from utils.error_handler import CoverageError, DegenerateSceneError, DomainError, FormatError, UnitError

logger = logging.getLogger(__name__)

PLANCK_H = 6.62607015e-34      # J s
LIGHT_C = 2.99792458e8         # m / s
BOLTZMANN_K = 1.380649e-23     # J / K
KM_PHOTOPIC = 683.0            # lm / W

PHOTOPIC_RANGE_NM = (400.0, 700.0)

RADIANCE = "radiance"
IRRADIANCE = "irradiance"
UNIT_TAGS = (RADIANCE, IRRADIANCE)

SIF_MAGIC = b"SIF1\n"
SIF_HEADER_KEYS = ("width", "height", "wave_start", "wave_step", "n_wave", "sample_pitch_mm", "unit")

# CIE 1924 photopic luminous efficiency, 380-780 nm at 10 nm, plus the 555 nm peak.
_V_WAVELENGTHS = np.array([
    380, 390, 400, 410, 420, 430, 440, 450, 460, 470, 480, 490, 500, 510, 520, 530,
    540, 550, 555, 560, 570, 580, 590, 600, 610, 620, 630, 640, 650, 660, 670, 680,
    690, 700, 710, 720, 730, 740, 750, 760, 770, 780,
], dtype=np.float64)
_V_VALUES = np.array([
    0.000039, 0.000120, 0.000396, 0.001210, 0.004000, 0.011600, 0.023000, 0.038000,
    0.060000, 0.090980, 0.139020, 0.208020, 0.323000, 0.503000, 0.710000, 0.862000,
    0.954000, 0.994950, 1.000000, 0.995000, 0.952000, 0.870000, 0.757000, 0.631000,
    0.503000, 0.381000, 0.265000, 0.175000, 0.107000, 0.061000, 0.032000, 0.017000,
    0.008210, 0.004102, 0.002091, 0.001047, 0.000520, 0.000249, 0.000120, 0.000060,
    0.000030, 0.000015,
], dtype=np.float64)

# CIE standard illuminant D65, relative SPD, 380-780 nm at 10 nm.
_D65_WAVELENGTHS = np.arange(380.0, 781.0, 10.0)
_D65_VALUES = np.array([
    49.9755, 54.6482, 82.7549, 91.4860, 93.4318, 86.6823, 104.8650, 117.0080,
    117.8120, 114.8610, 115.9230, 108.8110, 109.3540, 107.8020, 104.7900, 107.6890,
    104.4050, 104.0460, 100.0000, 96.3342, 95.7880, 88.6856, 90.0062, 89.5991,
    87.6987, 83.2886, 83.6992, 80.0268, 80.2146, 82.2778, 78.2842, 69.7213,
    71.6091, 74.3490, 61.6040, 69.8856, 75.0870, 63.5927, 46.4182, 66.8054,
    63.3828,
], dtype=np.float64)


def photopic_v(wavelengths) -> np.ndarray:
    """V(lambda) at arbitrary wavelengths (nm); zero outside 380-780 nm"""
    wl = np.asarray(wavelengths, dtype=np.float64)
    return np.interp(wl, _V_WAVELENGTHS, _V_VALUES, left=0.0, right=0.0)


def _check_coverage(wavelengths: np.ndarray):
    lo, hi = PHOTOPIC_RANGE_NM
    if wavelengths.size == 0 or wavelengths.min() > lo or wavelengths.max() < hi:
        span = (float(wavelengths.min()), float(wavelengths.max())) if wavelengths.size else None
        raise CoverageError(
            f"Spectral grid {span} does not cover {lo:.0f}-{hi:.0f} nm",
            details={"grid": span},
        )


@dataclass(frozen=True, eq=False)
class SPD:
    """Spectral power distribution sampled on a wavelength grid (nm)"""
    wavelengths: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        pw = np.asarray(self.power, dtype=np.float64)
        if wl.ndim != 1 or wl.shape != pw.shape:
            raise DomainError("SPD wavelengths and power must be 1-D arrays of equal length")
        if wl.size > 1 and np.any(np.diff(wl) <= 0):
            raise DomainError("SPD wavelengths must be strictly increasing")
        if not np.all(np.isfinite(pw)) or np.any(pw < 0):
            raise DomainError("SPD power must be finite and nonnegative")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "power", pw)

    def resample(self, wavelengths) -> "SPD":
        """Linear interpolation onto another grid; zero outside the sampled range"""
        wl = np.asarray(wavelengths, dtype=np.float64)
        return SPD(wl, np.interp(wl, self.wavelengths, self.power, left=0.0, right=0.0))

    def scaled(self, factor: float) -> "SPD":
        return SPD(self.wavelengths, self.power * float(factor))

    def scaled_to_luminance(self, target_cd_m2: float) -> "SPD":
        """Rescale a radiance SPD so its luminance equals the target"""
        current = luminance(self)
        if current <= 0:
            raise DegenerateSceneError("Cannot scale an SPD with zero luminance")
        return self.scaled(target_cd_m2 / current)


def d65_spd(wavelengths) -> SPD:
    """CIE D65 relative SPD, 100 at 560 nm"""
    return SPD(_D65_WAVELENGTHS, _D65_VALUES).resample(wavelengths)


def blackbody_spd(wavelengths, temperature_k: float) -> SPD:
    """Planck spectral radiance shape, normalized to peak 1 on the given grid"""
    if temperature_k <= 0:
        raise DomainError(f"Blackbody temperature must be positive, got {temperature_k}")
    wl = np.asarray(wavelengths, dtype=np.float64)
    wl_m = wl * 1e-9
    exponent = PLANCK_H * LIGHT_C / (wl_m * BOLTZMANN_K * temperature_k)
    radiance = 2.0 * PLANCK_H * LIGHT_C ** 2 / wl_m ** 5 / np.expm1(exponent)
    return SPD(wl, radiance / radiance.max())


def luminance(spd: SPD) -> float:
    """Luminance (cd/m^2) of a spectral radiance SPD"""
    _check_coverage(spd.wavelengths)
    if spd.wavelengths.size > 1:
        step = np.gradient(spd.wavelengths)
    else:
        step = np.ones(1)
    return float(KM_PHOTOPIC * np.sum(photopic_v(spd.wavelengths) * spd.power * step))


@dataclass(frozen=True, eq=False)
class SpectralImage:
    """Sampled spectral radiance or irradiance plane, values[band, row, col]"""
    values: np.ndarray
    wave_start: float
    wave_step: float
    sample_pitch: float  # mm per sample on its plane
    unit_tag: str = RADIANCE

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 1:
            raise DomainError(f"SpectralImage values must be (bands, rows, cols), got shape {values.shape}")
        if not (self.wave_step > 0 and self.sample_pitch > 0):
            raise DomainError("wave_step and sample_pitch must be positive")
        if self.unit_tag not in UNIT_TAGS:
            raise UnitError(f"Unknown unit tag '{self.unit_tag}'")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DomainError("SpectralImage values must be finite and nonnegative")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "wave_start", float(self.wave_start))
        object.__setattr__(self, "wave_step", float(self.wave_step))
        object.__setattr__(self, "sample_pitch", float(self.sample_pitch))

    @property
    def n_wave(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def wavelengths(self) -> np.ndarray:
        return self.wave_start + self.wave_step * np.arange(self.n_wave)

    def band_means(self) -> np.ndarray:
        return self.values.mean(axis=(1, 2))

    def with_values(self, values: np.ndarray, unit_tag: Optional[str] = None) -> "SpectralImage":
        """Same sampling, new values"""
        return SpectralImage(values, self.wave_start, self.wave_step, self.sample_pitch,
                             unit_tag or self.unit_tag)


def luminance_map(scene: SpectralImage) -> np.ndarray:
    """Per-sample luminance (cd/m^2) of a radiance image"""
    if scene.unit_tag != RADIANCE:
        raise UnitError(f"Luminance needs a radiance image, got {scene.unit_tag}")
    _check_coverage(scene.wavelengths)
    weights = KM_PHOTOPIC * photopic_v(scene.wavelengths) * scene.wave_step
    return np.tensordot(weights, scene.values, axes=(0, 0))


def scene_mean_illuminance(scene: SpectralImage, exclude: Optional[np.ndarray] = None) -> float:
    """pi x mean luminance over samples not masked out by `exclude`"""
    lum = luminance_map(scene)
    if exclude is not None:
        keep = ~np.asarray(exclude, dtype=bool)
        if not keep.any():
            raise DegenerateSceneError("Every sample is excluded from the illuminance mean")
        return float(np.pi * lum[keep].mean())
    return float(np.pi * lum.mean())


def scale_to_illuminance(scene: SpectralImage, target: float,
                         exclude: Optional[np.ndarray] = None) -> SpectralImage:
    """Multiply all radiance by one scalar so the mean illuminance hits `target` lux"""
    if target < 0:
        raise DomainError(f"Target illuminance must be >= 0, got {target}")
    current = scene_mean_illuminance(scene, exclude)
    if current <= 0:
        raise DegenerateSceneError("Cannot scale an all-dark scene to a target illuminance")
    if np.isclose(current, target, rtol=1e-12, atol=0.0):
        return scene
    return scene.with_values(scene.values * (target / current))


def encode_sif(image: SpectralImage) -> bytes:
    """Serialize to the .sif byte layout"""
    header = {
        "width": int(image.width),
        "height": int(image.height),
        "wave_start": float(image.wave_start),
        "wave_step": float(image.wave_step),
        "n_wave": int(image.n_wave),
        "sample_pitch_mm": float(image.sample_pitch),
        "unit": image.unit_tag,
    }
    payload = np.ascontiguousarray(image.values, dtype="<f4").tobytes()
    return SIF_MAGIC + json.dumps(header).encode("ascii") + b"\n" + payload


def decode_sif(data: bytes) -> SpectralImage:
    """Parse .sif bytes, rejecting anything malformed"""
    if not data.startswith(SIF_MAGIC):
        if data[:3] == b"SIF":
            raise FormatError(f"Unsupported .sif version {data[3:4]!r}")
        raise FormatError("Missing .sif magic")

    end = data.find(b"\n", len(SIF_MAGIC))
    if end < 0:
        raise FormatError("Truncated .sif header")
    try:
        header = json.loads(data[len(SIF_MAGIC):end].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"Unreadable .sif header: {e}")

    if not isinstance(header, dict) or tuple(header) != SIF_HEADER_KEYS:
        raise FormatError(f"Unexpected .sif header keys: {header}")
    width, height, n_wave = header["width"], header["height"], header["n_wave"]
    if not all(isinstance(v, int) and v > 0 for v in (width, height, n_wave)):
        raise FormatError("Image dimensions must be positive integers")
    if header["unit"] not in UNIT_TAGS:
        raise FormatError(f"Unknown unit '{header['unit']}'")

    payload = data[end + 1:]
    expected = n_wave * height * width * 4
    if len(payload) != expected:
        kind = "Truncated" if len(payload) < expected else "Oversized"
        raise FormatError(f"{kind} .sif payload: {len(payload)} bytes, expected {expected}")

    values = np.frombuffer(payload, dtype="<f4").reshape(n_wave, height, width)
    if not np.all(np.isfinite(values)):
        raise FormatError(".sif payload contains non-finite samples")
    if np.any(values < 0):
        raise FormatError(".sif payload contains negative samples")

    try:
        return SpectralImage(values.astype(np.float64), header["wave_start"], header["wave_step"],
                             header["sample_pitch_mm"], header["unit"])
    except DomainError as e:
        raise FormatError(f"Invalid .sif header values: {e.message}")


def write_sif(image: SpectralImage, path: Union[str, Path]):
    Path(path).write_bytes(encode_sif(image))


def read_sif(path: Union[str, Path]) -> SpectralImage:
    return decode_sif(Path(path).read_bytes())

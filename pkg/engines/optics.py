"""
Diffraction-limited lens model: camera-equation scaling and per-band OTF filtering.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import fft

from engines.spectral import IRRADIANCE, RADIANCE, SpectralImage
from utils.error_handler import DomainError, SamplingError, UnitError
from utils.monitoring import performance_monitor

logger = logging.getLogger(__name__)

PSF_RADIUS_AIRY_MULTIPLE = 3.0
MIN_PADDING_PSF_RADII = 4.0


class OpticsConfig(BaseModel):
    """Diffraction-limited lens"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    f_number: float = Field(2.4, gt=0)
    focal_length_mm: float = Field(6.0, gt=0)
    transmittance: float = Field(1.0, gt=0, le=1)
    relative_illumination: bool = False


@dataclass(frozen=True)
class OpticsResult:
    irradiance: SpectralImage
    clamped: int


def cutoff_frequency(wavelength_nm, f_number: float):
    """Incoherent cutoff 1/(lambda N) in cycles/mm"""
    return 1.0 / (np.asarray(wavelength_nm, dtype=np.float64) * 1e-6 * f_number)


def psf_radius_mm(wavelength_nm: float, f_number: float) -> float:
    return PSF_RADIUS_AIRY_MULTIPLE * 1.22 * wavelength_nm * 1e-6 * f_number


def diffraction_otf(f, wavelength_nm, f_number: float) -> np.ndarray:
    """Circular-pupil incoherent OTF at spatial frequency f (cycles/mm)"""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise DomainError("Spatial frequency must be >= 0")
    nu = f / cutoff_frequency(wavelength_nm, f_number)
    out = np.zeros(np.broadcast(nu).shape, dtype=np.float64)
    inside = nu < 1.0
    phi = np.arccos(nu[inside])
    out[inside] = (2.0 / np.pi) * (phi - np.cos(phi) * np.sin(phi))
    out[np.broadcast_to(f, out.shape) == 0] = 1.0
    return out


def radiance_to_irradiance_scale(f_number: float, transmittance: float = 1.0) -> float:
    """Camera equation for a distant object: pi T / (4 N^2)"""
    return np.pi * transmittance / (4.0 * f_number ** 2)


def relative_illumination_map(shape: Tuple[int, int], pitch_mm: float, focal_length_mm: float,
                              field_center_mm: Tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """cos^4 falloff for each sample; field_center_mm locates the image center (x, y)"""
    rows, cols = shape
    x = (np.arange(cols) - (cols - 1) / 2.0) * pitch_mm + field_center_mm[0]
    y = (np.arange(rows) - (rows - 1) / 2.0) * pitch_mm + field_center_mm[1]
    r2 = y[:, None] ** 2 + x[None, :] ** 2
    cos2 = focal_length_mm ** 2 / (focal_length_mm ** 2 + r2)
    return cos2 ** 2


def check_sampling(scene: SpectralImage, f_number: float):
    """Refuse grids whose Nyquist frequency is below the cutoff at the shortest band"""
    nyquist = 1.0 / (2.0 * scene.sample_pitch)
    fc = float(cutoff_frequency(scene.wavelengths.min(), f_number))
    if nyquist < fc:
        raise SamplingError(
            f"Grid Nyquist {nyquist:.1f} cy/mm is below the diffraction cutoff {fc:.1f} cy/mm "
            f"at {scene.wavelengths.min():.0f} nm, f/{f_number}",
            details={"nyquist": nyquist, "cutoff": fc, "pitch_mm": scene.sample_pitch},
        )


def _mirror_frequencies(n: int, pitch_mm: float) -> np.ndarray:
    # DCT-II basis k of an n-sample signal is frequency k / (2 n pitch) of its mirror extension
    return np.arange(n) / (2.0 * n * pitch_mm)


@performance_monitor("apply_optics")
def apply_optics(scene: SpectralImage, optics: OpticsConfig,
                 field_center_mm: Tuple[float, float] = (0.0, 0.0), workers: int = 1) -> OpticsResult:
    """Scene radiance -> sensor irradiance, blurred band by band with the diffraction OTF.

    Filtering runs in the DCT-II domain, which is convolution of the mirror-extended image:
    borders see reflected content rather than wrapped content and the band mean is exact.
    """
    if scene.unit_tag != RADIANCE:
        raise UnitError(f"apply_optics expects radiance, got {scene.unit_tag}")
    check_sampling(scene, optics.f_number)

    extent = min(scene.height, scene.width) * scene.sample_pitch
    needed = MIN_PADDING_PSF_RADII * psf_radius_mm(scene.wavelengths.max(), optics.f_number)
    if extent < needed:
        logger.warning(f"Image extent {extent:.4f} mm is shorter than {MIN_PADDING_PSF_RADII:g} PSF radii "
                       f"({needed:.4f} mm); mirror extension repeats before the PSF tail decays")

    scale = radiance_to_irradiance_scale(optics.f_number, optics.transmittance)
    fy = _mirror_frequencies(scene.height, scene.sample_pitch)
    fx = _mirror_frequencies(scene.width, scene.sample_pitch)
    rho = np.hypot(fy[:, None], fx[None, :])

    falloff = None
    if optics.relative_illumination:
        falloff = relative_illumination_map((scene.height, scene.width), scene.sample_pitch,
                                            optics.focal_length_mm, field_center_mm)

    out = np.empty(scene.values.shape, dtype=np.float64)
    for band, wavelength in enumerate(scene.wavelengths):
        coefficients = fft.dctn(scene.values[band], type=2, norm="ortho", workers=workers)
        coefficients *= diffraction_otf(rho, wavelength, optics.f_number)
        filtered = fft.idctn(coefficients, type=2, norm="ortho", workers=workers)
        filtered *= scale
        if falloff is not None:
            filtered *= falloff
        out[band] = filtered

    band_max = out.max(axis=(1, 2), keepdims=True)
    ringing = out < -1e-9 * np.maximum(band_max, np.finfo(float).tiny)
    if ringing.any():
        logger.warning(f"{int(ringing.sum())} samples ring below -1e-9 of their band maximum")
    negative = out < 0
    clamped = int(negative.sum())
    if clamped:
        out[negative] = 0.0
        logger.debug(f"Clamped {clamped} negative irradiance samples to zero")

    return OpticsResult(scene.with_values(out, IRRADIANCE), clamped)


def export_otf_csv(optics: OpticsConfig, wavelengths_nm: Sequence[float],
                   frequencies: Sequence[float], path: Union[str, Path]):
    """OTF curves as CSV: frequency_cyc_per_mm plus one otf_<nm>nm column per wavelength"""
    freq = np.asarray(frequencies, dtype=np.float64)
    table = {"frequency_cyc_per_mm": freq}
    for wavelength in wavelengths_nm:
        table[f"otf_{wavelength:g}nm"] = diffraction_otf(freq, wavelength, optics.f_number)
    pd.DataFrame(table).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

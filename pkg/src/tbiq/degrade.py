"""Measurement operators: blur, 2x resampling and mixed Poisson-Gaussian noise."""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .seeding import SeedLike, make_rng

logger = logging.getLogger("tbiq")

_CLAMP_LOCK = threading.Lock()
_CLAMPED_PIXELS = 0


@dataclass(frozen=True)
class NoiseSpec:
    sigma_p: float = 0.013
    sigma_g: float = 0.35

    def validate(self) -> None:
        if float(self.sigma_p) < 0 or float(self.sigma_g) < 0:
            raise ValueError(
                f"Noise scales must be >= 0, got sigma_p={self.sigma_p}, sigma_g={self.sigma_g}."
            )

    @property
    def is_identity(self) -> bool:
        return float(self.sigma_p) == 0 and float(self.sigma_g) == 0


@dataclass(frozen=True)
class DegradationSpec:
    blur_sigma: float = 1.5
    downsample_factor: int = 1
    upsample_after: bool = False
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def validate(self) -> None:
        if float(self.blur_sigma) < 0:
            raise ValueError(f"blur_sigma must be >= 0, got {self.blur_sigma}.")
        if int(self.downsample_factor) not in (1, 2):
            raise ValueError(f"downsample_factor must be 1 or 2, got {self.downsample_factor}.")
        self.noise.validate()


RAYLEIGH_DEGRADATION = DegradationSpec(
    blur_sigma=1.5, downsample_factor=1, upsample_after=False, noise=NoiseSpec(0.013, 0.35)
)
MC_DEGRADATION = DegradationSpec(
    blur_sigma=1.5, downsample_factor=2, upsample_after=True, noise=NoiseSpec(1e-4, 1e-3)
)


def clamped_pixel_count() -> int:
    """Number of negative Poisson rates clamped to zero since the last reset."""
    return _CLAMPED_PIXELS


def reset_clamped_pixel_count() -> None:
    global _CLAMPED_PIXELS
    with _CLAMP_LOCK:
        _CLAMPED_PIXELS = 0


def _record_clamped(count: int) -> None:
    global _CLAMPED_PIXELS
    if count <= 0:
        return
    with _CLAMP_LOCK:
        _CLAMPED_PIXELS += count
    logger.debug("Clamped %d negative Poisson rates to zero", count)


def _check_image(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"Expected a 2-D image, got shape {arr.shape}.")
    return arr


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable unit-mass Gaussian blur with mirrored borders; ``sigma == 0`` is identity."""
    arr = _check_image(img)
    if float(sigma) < 0:
        raise ValueError(f"Blur sigma must be >= 0, got {sigma}.")
    if float(sigma) == 0:
        return arr.copy()
    return ndimage.gaussian_filter(arr, sigma=float(sigma), mode="mirror", truncate=4.0)


def downsample2(img: np.ndarray) -> np.ndarray:
    arr = _check_image(img)
    rows, cols = arr.shape
    if rows % 2 or cols % 2:
        raise ValueError(f"downsample2 requires even dimensions, got {rows}x{cols}.")
    return arr.reshape(rows // 2, 2, cols // 2, 2).mean(axis=(1, 3))


def upsample2(img: np.ndarray) -> np.ndarray:
    """Bilinear x2 upsampling on pixel-center coordinates; output doubles each dimension."""
    arr = _check_image(img)
    return ndimage.zoom(arr, 2, order=1, mode="nearest", grid_mode=True)


def apply_noise(img: np.ndarray, noise: NoiseSpec, seed: SeedLike) -> np.ndarray:
    """``sigma_p**2 * Poisson(x / sigma_p**2) + N(0, sigma_g**2)``; negative rates clamp to 0."""
    arr = _check_image(img)
    noise.validate()
    if noise.is_identity:
        return arr.copy()
    rng = make_rng(seed)
    out = arr.copy()
    sigma_p = float(noise.sigma_p)
    if sigma_p > 0:
        scale = sigma_p**2
        negative = arr < 0
        _record_clamped(int(negative.sum()))
        rate = np.where(negative, 0.0, arr) / scale
        out = scale * rng.poisson(rate).astype(float)
    sigma_g = float(noise.sigma_g)
    if sigma_g > 0:
        out = out + rng.normal(0.0, sigma_g, size=arr.shape)
    return out


def degrade_noise_free(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Deterministic part of the pipeline: blur and optional downsampling."""
    spec.validate()
    out = gaussian_blur(img, spec.blur_sigma)
    if int(spec.downsample_factor) == 2:
        out = downsample2(out)
    return out


def finish_degradation(noise_free: np.ndarray, spec: DegradationSpec, seed: SeedLike) -> np.ndarray:
    """Stochastic part of the pipeline: noise then optional upsampling."""
    out = apply_noise(noise_free, spec.noise, seed)
    if int(spec.downsample_factor) == 2 and spec.upsample_after:
        out = upsample2(out)
    return out


def degrade(img: np.ndarray, spec: DegradationSpec, seed: SeedLike) -> np.ndarray:
    """blur -> optional downsample -> noise -> optional upsample."""
    return finish_degradation(degrade_noise_free(img, spec), spec, seed)

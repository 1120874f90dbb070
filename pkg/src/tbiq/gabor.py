"""Gabor channel bank and channelized statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .objects import center_crop
from .observers import CovarianceEstimate, StatsAccumulator

DEFAULT_FREQUENCIES = (3 / 256, 3 / 128, 3 / 64, 3 / 32, 3 / 16, 3 / 8)
DEFAULT_ORIENTATIONS = tuple(k * 2.0 * math.pi / 5.0 for k in range(5))
DEFAULT_PHASES = (0.0, math.pi / 2.0)
OCTAVE_BANDWIDTH = 1.0


def channel_width(frequency: float, bandwidth_octaves: float = OCTAVE_BANDWIDTH) -> float:
    """FWHM of the Gaussian envelope for a given octave bandwidth (3 * 4ln2 / (2 pi nu) at 1 octave)."""
    b = 2.0**bandwidth_octaves
    return (4.0 * math.log(2.0) / (2.0 * math.pi * frequency)) * (b + 1.0) / (b - 1.0)


def gabor_function(
    x: np.ndarray | float,
    y: np.ndarray | float,
    frequency: float,
    orientation: float,
    phase: float,
    width: Optional[float] = None,
) -> np.ndarray:
    width = channel_width(frequency) if width is None else float(width)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    envelope = np.exp(-4.0 * math.log(2.0) * (x**2 + y**2) / width**2)
    carrier = np.cos(2.0 * math.pi * frequency * (x * math.cos(orientation) + y * math.sin(orientation)) + phase)
    return envelope * carrier


@dataclass(frozen=True)
class GaborChannelSet:
    matrix: np.ndarray
    frequencies: np.ndarray
    orientations: np.ndarray
    phases: np.ndarray
    widths: np.ndarray
    patch_shape: tuple[int, int]

    @property
    def n_channels(self) -> int:
        return int(self.matrix.shape[0])

    def channel_image(self, index: int) -> np.ndarray:
        return self.matrix[index].reshape(self.patch_shape)


def gabor_channels(
    patch_shape: Sequence[int] = (64, 64),
    *,
    frequencies: Sequence[float] = DEFAULT_FREQUENCIES,
    orientations: Sequence[float] = DEFAULT_ORIENTATIONS,
    phases: Sequence[float] = DEFAULT_PHASES,
) -> GaborChannelSet:
    """Channels sampled at pixel centers relative to the patch center, frequency-major order."""
    height, width = (int(v) for v in patch_shape)
    if height < 1 or width < 1:
        raise ValueError(f"Patch dimensions must be >= 1, got {patch_shape}.")
    ys = np.arange(height, dtype=float) - (height - 1) / 2.0
    xs = np.arange(width, dtype=float) - (width - 1) / 2.0
    grid_x, grid_y = np.meshgrid(xs, ys)
    rows = []
    params = []
    for nu in frequencies:
        w = channel_width(nu)
        for theta in orientations:
            for phi in phases:
                rows.append(gabor_function(grid_x, grid_y, nu, theta, phi, w).reshape(-1))
                params.append((nu, theta, phi, w))
    table = np.array(params, dtype=float).reshape(-1, 4)
    return GaborChannelSet(
        matrix=np.array(rows, dtype=float).reshape(len(rows), height * width),
        frequencies=table[:, 0],
        orientations=table[:, 1],
        phases=table[:, 2],
        widths=table[:, 3],
        patch_shape=(height, width),
    )


def channelize(channels: GaborChannelSet, images: np.ndarray) -> np.ndarray:
    """``v = T f`` for one image or a stack; larger images are center-cropped to the patch."""
    arr = np.asarray(images, dtype=float)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"channelize expects (h, w) or (n, h, w) input, got {arr.shape}.")
    if arr.shape[-2:] != channels.patch_shape:
        if arr.shape[-2] < channels.patch_shape[0] or arr.shape[-1] < channels.patch_shape[1]:
            raise ValueError(f"Image {arr.shape[-2:]} smaller than channel patch {channels.patch_shape}.")
        arr = center_crop(arr, channels.patch_shape)
    out = arr.reshape(arr.shape[0], -1) @ channels.matrix.T
    return out[0] if single else out


def channelized_stats(channels: GaborChannelSet, class0: np.ndarray, class1: np.ndarray) -> CovarianceEstimate:
    acc = StatsAccumulator()
    acc.update(channelize(channels, class0), 0)
    acc.update(channelize(channels, class1), 1)
    return acc.finalize()


def project_stats(channels: GaborChannelSet, stats: CovarianceEstimate) -> CovarianceEstimate:
    """Image-space statistics mapped into channel space: ``T K T^T`` and ``T mean_diff``."""
    t = channels.matrix
    if t.shape[1] != stats.dim:
        raise ValueError(f"Channel length {t.shape[1]} does not match statistics dimension {stats.dim}.")
    return CovarianceEstimate(
        mean_diff=t @ stats.mean_diff,
        covariance=t @ stats.covariance @ t.T,
        mean0=t @ stats.mean0,
        mean1=t @ stats.mean1,
        n0=stats.n0,
        n1=stats.n1,
    )

"""Object models: clustered lumpy backgrounds, Rayleigh signals and MC clusters.

Images are plain 2-D float64 ``numpy`` arrays indexed ``[row, col]``; pixel
``(row, col)`` has its center at coordinates ``(y=row, x=col)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage, special
from skimage import io as skio

from .seeding import SeedLike, make_rng

logger = logging.getLogger("tbiq")

HYPOTHESES = ("H0_pair", "H1_line")
LINE_MODES = ("per_pixel", "mass_matched")
MC_SOURCES = ("synthetic", "library")

# dense evaluation chunk (blobs x pixels) for the CLB renderer
_CLB_CHUNK_ELEMENTS = 1 << 21


# -----------------------------------------------------------------------------
# Clustered lumpy background
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class ClbParams:
    mean_clusters: float = 150.0
    mean_blobs_per_cluster: float = 20.0
    half_axes: tuple[float, float] = (5.0, 2.0)
    alpha: float = 2.1
    beta: float = 0.5
    cluster_spread: float = 12.0
    width: int = 128
    height: int = 128
    # pixels; None means 4 * max(Lx, Ly) / alpha ** (1 / beta)
    support_radius: float | None = None

    def validate(self) -> None:
        positive = {
            "mean_clusters": self.mean_clusters,
            "mean_blobs_per_cluster": self.mean_blobs_per_cluster,
            "half_axes[0]": self.half_axes[0],
            "half_axes[1]": self.half_axes[1],
            "alpha": self.alpha,
            "beta": self.beta,
            "cluster_spread": self.cluster_spread,
        }
        bad = [f"{name}={value}" for name, value in positive.items() if not float(value) > 0]
        if bad:
            raise ValueError(f"CLB parameters must be strictly positive: {', '.join(bad)}")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError(f"CLB image size must be >= 1, got {self.width}x{self.height}.")
        if self.support_radius is not None and not float(self.support_radius) > 0:
            raise ValueError(f"support_radius must be > 0, got {self.support_radius}.")

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.height), int(self.width)

    def blob_radius(self) -> float:
        """Distance from a blob center beyond which the blob is not evaluated."""
        if self.support_radius is not None:
            return float(self.support_radius)
        return 4.0 * max(self.half_axes) / self.alpha ** (1.0 / self.beta)


@dataclass(frozen=True)
class ClbBlobs:
    """Sampled blob list of one CLB realisation (centers in pixel coordinates)."""

    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    n_clusters: int

    def __len__(self) -> int:
        return int(self.x.shape[0])


def sample_clb_blobs(params: ClbParams, seed: SeedLike) -> ClbBlobs:
    params.validate()
    rng = make_rng(seed)
    n_clusters = int(rng.poisson(params.mean_clusters))
    # field of view spans the pixel footprints [-0.5, size - 0.5]
    cx = rng.uniform(-0.5, params.width - 0.5, size=n_clusters)
    cy = rng.uniform(-0.5, params.height - 0.5, size=n_clusters)
    counts = rng.poisson(params.mean_blobs_per_cluster, size=n_clusters)
    total = int(counts.sum())
    offsets = rng.normal(0.0, params.cluster_spread, size=(total, 2))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=total)
    x = np.repeat(cx, counts) + offsets[:, 0]
    y = np.repeat(cy, counts) + offsets[:, 1]
    return ClbBlobs(x=x, y=y, theta=theta, n_clusters=n_clusters)


def blob_value(
    dx: np.ndarray | float,
    dy: np.ndarray | float,
    theta: np.ndarray | float,
    params: ClbParams,
) -> np.ndarray:
    """Blob function ``exp(-alpha * |R r|^beta / L(R r))`` at offset ``r = (dx, dy)``."""
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    vx = cos_t * dx + sin_t * dy
    vy = -sin_t * dx + cos_t * dy
    lx, ly = (float(v) for v in params.half_axes)
    radius = np.hypot(vx, vy)
    # |v|^beta / L(v) with L(v) the ellipse radius along v
    anisotropy = np.sqrt((ly * vx) ** 2 + (lx * vy) ** 2) / (lx * ly)
    safe = np.where(radius > 0, radius, 1.0)
    exponent = np.where(radius > 0, params.alpha * safe ** (params.beta - 1.0) * anisotropy, 0.0)
    return np.exp(-exponent)


def render_clb(blobs: ClbBlobs, params: ClbParams) -> np.ndarray:
    """Sum of the blobs at pixel centers, each truncated at ``params.blob_radius()``.

    A radius at least as long as the image diagonal gives the exact, untruncated sum
    for every blob whose center lies in the field of view.
    """
    height, width = params.shape
    out = np.zeros((height, width), dtype=float)
    if len(blobs) == 0:
        return out
    radius = params.blob_radius()
    if radius >= math.hypot(height, width):
        _render_dense(out, blobs, params, radius)
    else:
        _render_windowed(out, blobs, params, radius)
    return out


def _render_dense(out: np.ndarray, blobs: ClbBlobs, params: ClbParams, radius: float) -> None:
    height, width = out.shape
    ys, xs = np.mgrid[0:height, 0:width]
    xs = xs.ravel().astype(float)
    ys = ys.ravel().astype(float)
    flat = out.reshape(-1)
    chunk = max(1, _CLB_CHUNK_ELEMENTS // flat.size)
    for start in range(0, len(blobs), chunk):
        stop = start + chunk
        dx = xs[None, :] - blobs.x[start:stop, None]
        dy = ys[None, :] - blobs.y[start:stop, None]
        theta = blobs.theta[start:stop, None]
        values = np.where(np.hypot(dx, dy) <= radius, blob_value(dx, dy, theta, params), 0.0)
        flat += values.sum(axis=0)


def _render_windowed(out: np.ndarray, blobs: ClbBlobs, params: ClbParams, radius: float) -> None:
    """Evaluate every blob on a square stencil around its nearest pixel, vectorized over blobs."""
    height, width = out.shape
    reach = int(math.ceil(radius + 0.5))
    oy, ox = np.mgrid[-reach : reach + 1, -reach : reach + 1]
    ox = ox.ravel()
    oy = oy.ravel()
    flat = out.reshape(-1)
    chunk = max(1, _CLB_CHUNK_ELEMENTS // ox.size)
    for start in range(0, len(blobs), chunk):
        stop = start + chunk
        bx = blobs.x[start:stop, None]
        by = blobs.y[start:stop, None]
        cols = np.rint(bx).astype(np.int64) + ox[None, :]
        rows = np.rint(by).astype(np.int64) + oy[None, :]
        dx = cols - bx
        dy = rows - by
        keep = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height) & (np.hypot(dx, dy) <= radius)
        if not keep.any():
            continue
        values = blob_value(dx, dy, blobs.theta[start:stop, None], params)
        flat += np.bincount((rows * width + cols)[keep], weights=values[keep], minlength=flat.size)


def generate_clb(params: ClbParams, seed: SeedLike) -> np.ndarray:
    """One clustered lumpy background realisation; deterministic given ``seed``."""
    return render_clb(sample_clb_blobs(params, seed), params)


# -----------------------------------------------------------------------------
# Rayleigh pair / line signals
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class RayleighSignalSpec:
    length: int = 7
    amplitude: float = 0.8
    blur_sigma: float = 1.375
    hypothesis: str = "H0_pair"
    line_mode: str = "per_pixel"

    def validate(self) -> None:
        if int(self.length) < 3:
            raise ValueError(f"Rayleigh signal length must be >= 3, got {self.length}.")
        if not float(self.amplitude) > 0:
            raise ValueError(f"Rayleigh amplitude must be > 0, got {self.amplitude}.")
        if float(self.blur_sigma) < 0:
            raise ValueError(f"Rayleigh blur_sigma must be >= 0, got {self.blur_sigma}.")
        if self.hypothesis not in HYPOTHESES:
            raise ValueError(f"hypothesis must be one of: {', '.join(HYPOTHESES)}.")
        if self.line_mode not in LINE_MODES:
            raise ValueError(f"line_mode must be one of: {', '.join(LINE_MODES)}.")


def rayleigh_sources(spec: RayleighSignalSpec) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal offsets (from the signal center) and weights of the point sources."""
    spec.validate()
    length = int(spec.length)
    amplitude = float(spec.amplitude)
    if spec.hypothesis == "H0_pair":
        half = (length - 2) / 2.0
        return np.array([-half, half]), np.array([amplitude, amplitude])
    offsets = np.arange(length, dtype=float) - (length - 1) / 2.0
    per_pixel = amplitude if spec.line_mode == "per_pixel" else 2.0 * amplitude / length
    return offsets, np.full(length, per_pixel)


def _sampled_gaussian(n: int, center: float, sigma: float) -> np.ndarray:
    if sigma == 0:
        # bilinear splat of an impulse at a possibly fractional position
        profile = np.zeros(n)
        base = int(math.floor(center))
        frac = center - base
        for idx, weight in ((base, 1.0 - frac), (base + 1, frac)):
            if weight > 0 and 0 <= idx < n:
                profile[idx] += weight
        return profile
    coords = np.arange(n, dtype=float)
    profile = np.exp(-0.5 * ((coords - center) / sigma) ** 2)
    return profile / profile.sum()


def make_rayleigh_signal(spec: RayleighSignalSpec, shape: Sequence[int]) -> np.ndarray:
    """Blurred pair (H0) or line (H1) centered on the image center."""
    height, width = (int(v) for v in shape)
    offsets, weights = rayleigh_sources(spec)
    sigma = float(spec.blur_sigma)
    cy = (height - 1) / 2.0
    cx = (width - 1) / 2.0
    margin = 3.0 * sigma
    extent = float(offsets.max() - offsets.min()) + 2.0 * margin + 1.0
    if extent > width or 2.0 * margin + 1.0 > height:
        raise ValueError(
            f"Rayleigh signal (length={spec.length}, blur_sigma={sigma}) exceeds grid {height}x{width}."
        )
    row_profile = _sampled_gaussian(height, cy, sigma)
    out = np.zeros((height, width), dtype=float)
    for offset, weight in zip(offsets, weights):
        out += weight * np.outer(row_profile, _sampled_gaussian(width, cx + offset, sigma))
    return out


# -----------------------------------------------------------------------------
# Microcalcification clusters
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class SyntheticMcParams:
    size: int = 200
    n_blobs_range: tuple[int, int] = (5, 15)
    sigma_range: tuple[float, float] = (0.5, 1.5)
    amplitude_range: tuple[float, float] = (0.5, 1.0)
    disk_radius: float = 20.0
    n_blobs: int | None = None

    def validate(self) -> None:
        if int(self.size) < 1:
            raise ValueError(f"Synthetic MC image size must be >= 1, got {self.size}.")
        if not 0 < float(self.disk_radius) <= self.size / 2.0:
            raise ValueError(
                f"disk_radius must lie in (0, size/2]; got {self.disk_radius} for size {self.size}."
            )
        lo, hi = self.n_blobs_range
        if not 0 <= lo <= hi:
            raise ValueError(f"n_blobs_range must satisfy 0 <= lo <= hi, got {self.n_blobs_range}.")
        if not 0 < self.sigma_range[0] <= self.sigma_range[1]:
            raise ValueError(f"sigma_range must satisfy 0 < lo <= hi, got {self.sigma_range}.")
        if not 0 < self.amplitude_range[0] <= self.amplitude_range[1]:
            raise ValueError(f"amplitude_range must satisfy 0 < lo <= hi, got {self.amplitude_range}.")
        if self.n_blobs is not None and int(self.n_blobs) < 0:
            raise ValueError(f"n_blobs must be >= 0, got {self.n_blobs}.")


@dataclass(frozen=True)
class McBlobs:
    """Sampled MC specks; ``amplitude`` holds the values actually rendered (after capping)."""

    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    amplitude: np.ndarray

    def masses(self) -> np.ndarray:
        """Analytic mass ``2 pi sigma^2 a`` of every speck."""
        return 2.0 * np.pi * self.sigma**2 * self.amplitude


# footprint values below this are ignored when capping amplitudes
_MC_NEGLIGIBLE = 1e-12


def _pixel_fractions(n: int, center: float, sigma: float) -> np.ndarray:
    """Share of a unit-mass 1-D Gaussian falling inside each pixel footprint ``[i - 0.5, i + 0.5]``."""
    edges = (np.arange(n + 1, dtype=float) - 0.5 - center) / sigma
    return np.diff(special.ndtr(edges))


def _unit_speck(size: int, x: float, y: float, sigma: float) -> np.ndarray:
    """Pixel-integrated Gaussian of unit amplitude (analytic mass ``2 pi sigma^2``)."""
    return 2.0 * np.pi * sigma**2 * np.outer(_pixel_fractions(size, y, sigma), _pixel_fractions(size, x, sigma))


def _cap_amplitudes(x: np.ndarray, y: np.ndarray, sigma: np.ndarray, amplitude: np.ndarray, size: int) -> np.ndarray:
    """Shrink amplitudes in order so the running sum never exceeds 1."""
    out = np.zeros((size, size), dtype=float)
    capped = np.asarray(amplitude, dtype=float).copy()
    for i in range(capped.size):
        unit = _unit_speck(size, x[i], y[i], sigma[i])
        live = capped[i] * unit > _MC_NEGLIGIBLE
        if live.any():
            headroom = float(((1.0 - out[live]) / unit[live]).min())
            capped[i] = min(capped[i], max(headroom, 0.0))
        out += capped[i] * unit
    return capped


def sample_mc_blobs(params: SyntheticMcParams, seed: SeedLike) -> McBlobs:
    params.validate()
    rng = make_rng(seed)
    if params.n_blobs is not None:
        count = int(params.n_blobs)
    else:
        lo, hi = params.n_blobs_range
        count = int(rng.integers(lo, hi + 1))
    center = (params.size - 1) / 2.0
    # uniform inside the disk
    radius = params.disk_radius * np.sqrt(rng.uniform(0.0, 1.0, size=count))
    angle = rng.uniform(0.0, 2.0 * np.pi, size=count)
    sigma = rng.uniform(*params.sigma_range, size=count)
    amplitude = rng.uniform(*params.amplitude_range, size=count)
    x = center + radius * np.cos(angle)
    y = center + radius * np.sin(angle)
    capped = _cap_amplitudes(x, y, sigma, amplitude, int(params.size))
    n_capped = int(np.count_nonzero(capped < amplitude))
    if n_capped:
        logger.debug("Capped %d of %d MC speck amplitudes to keep the cluster within [0, 1]", n_capped, count)
    return McBlobs(x=x, y=y, sigma=sigma, amplitude=capped)


def render_mc_blobs(blobs: McBlobs, size: int) -> np.ndarray:
    out = np.zeros((int(size), int(size)), dtype=float)
    for x, y, sigma, amplitude in zip(blobs.x, blobs.y, blobs.sigma, blobs.amplitude):
        out += amplitude * _unit_speck(int(size), x, y, sigma)
    return np.clip(out, 0.0, 1.0)


def synth_mc_cluster(params: SyntheticMcParams, seed: SeedLike) -> np.ndarray:
    """Offline stand-in for a segmented MC cluster: bright Gaussian specks in a disk, values in [0, 1].

    Specks are integrated over the pixel footprints, so a cluster whose specks
    lie well inside the grid has mass ``McBlobs.masses().sum()``.
    """
    return render_mc_blobs(sample_mc_blobs(params, seed), params.size)


@dataclass(frozen=True)
class McSignalSpec:
    source: str = "synthetic"
    library_path: str | None = None
    library_size: int = 11
    contrast_range: tuple[float, float] = (0.05, 0.06)
    rotation_range: tuple[float, float] = (0.0, 360.0)
    crop_size: int = 128
    synthetic: SyntheticMcParams = field(default_factory=SyntheticMcParams)

    def validate(self) -> None:
        if self.source not in MC_SOURCES:
            raise ValueError(f"MC source must be one of: {', '.join(MC_SOURCES)}.")
        if self.source == "library" and not self.library_path:
            raise ValueError("MC source 'library' requires library_path.")
        lo, hi = (float(v) for v in self.contrast_range)
        if not 0 < lo <= hi:
            raise ValueError(f"contrast_range must satisfy 0 < lo <= hi, got {self.contrast_range}.")
        r_lo, r_hi = (float(v) for v in self.rotation_range)
        if not 0 <= r_lo <= r_hi <= 360:
            raise ValueError(f"rotation_range must lie within [0, 360], got {self.rotation_range}.")
        if int(self.crop_size) < 1:
            raise ValueError(f"crop_size must be >= 1, got {self.crop_size}.")
        if int(self.library_size) < 1:
            raise ValueError(f"library_size must be >= 1, got {self.library_size}.")
        self.synthetic.validate()


def _normalize_loaded(image: np.ndarray) -> np.ndarray:
    if np.issubdtype(image.dtype, np.integer):
        return image.astype(float) / float(np.iinfo(image.dtype).max)
    data = image.astype(float)
    peak = float(np.nanmax(data)) if data.size else 0.0
    if peak > 1.0:
        data = data / peak
    return np.clip(data, 0.0, 1.0)


def _load_raw_f32(path: Path) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    side = int(round(math.sqrt(data.size)))
    if side * side != data.size:
        raise ValueError(f"Raw MC crop {path} is not square ({data.size} values).")
    return data.reshape(side, side)


def load_mc_library(path: str | Path) -> list[np.ndarray]:
    """Load grayscale 8/16-bit PNG or raw little-endian f32 crops, normalized to [0, 1]."""
    root = Path(path)
    if not root.is_dir():
        raise ValueError(f"MC crop library directory not found: {root}")
    clusters: list[np.ndarray] = []
    for item in sorted(root.iterdir()):
        suffix = item.suffix.lower()
        if suffix == ".png":
            image = skio.imread(item)
            if image.ndim == 3:
                image = image[..., 0]
        elif suffix in {".raw", ".f32"}:
            image = _load_raw_f32(item)
        else:
            continue
        clusters.append(_normalize_loaded(np.asarray(image)))
    if not clusters:
        raise ValueError(f"MC crop library is empty: {root}")
    logger.info("Loaded %d MC cluster crops from %s", len(clusters), root)
    return clusters


def build_mc_library(spec: McSignalSpec, seed: SeedLike) -> list[np.ndarray]:
    spec.validate()
    if spec.source == "library":
        return load_mc_library(spec.library_path)
    rng = make_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=int(spec.library_size))
    return [synth_mc_cluster(spec.synthetic, int(s)) for s in seeds]


def center_crop(image: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    height, width = (int(v) for v in shape)
    rows, cols = image.shape[-2:]
    if height > rows or width > cols:
        raise ValueError(f"Crop {height}x{width} larger than image {rows}x{cols}.")
    r0 = (rows - height) // 2
    c0 = (cols - width) // 2
    return image[..., r0 : r0 + height, c0 : c0 + width]


def insert_cluster(background: np.ndarray, cluster: np.ndarray, contrast: float) -> np.ndarray:
    """Multiplicative insertion ``f_b * (c * s + 1)``."""
    if background.shape != cluster.shape:
        raise ValueError(
            f"Background {background.shape} and cluster {cluster.shape} must share dimensions."
        )
    return background * (float(contrast) * cluster + 1.0)


def insert_mc_cluster(
    background: np.ndarray,
    spec: McSignalSpec,
    seed: SeedLike,
    library: Sequence[np.ndarray],
) -> np.ndarray:
    """Pick, rotate (bilinear, zero padded), center-crop and insert one MC cluster."""
    if not library:
        raise ValueError("MC cluster library is empty.")
    rng = make_rng(seed)
    cluster = library[int(rng.integers(0, len(library)))]
    angle = float(rng.uniform(*spec.rotation_range))
    rotated = ndimage.rotate(cluster, angle, reshape=False, order=1, mode="constant", cval=0.0)
    crop = int(spec.crop_size)
    if crop > min(rotated.shape):
        raise ValueError(f"Crop size {crop} larger than rotated MC image {rotated.shape}.")
    s_mc = center_crop(rotated, (crop, crop))
    contrast = float(rng.uniform(*spec.contrast_range))
    return insert_cluster(background, s_mc, contrast)

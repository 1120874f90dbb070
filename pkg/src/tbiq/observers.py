"""Linear observers: Hotelling, truncated-SVD regularized Hotelling and channelized Hotelling."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd

from .metrics import auc as compute_auc
from .pipeline import atomic_write

logger = logging.getLogger("tbiq")

TEMPLATE_KINDS = ("HO", "RHO", "CHO")
HO_CONDITION_LIMIT = 1e12
TEMPLATE_MAGIC = b"TBTM"
TEMPLATE_VERSION = 1
_TEMPLATE_PREAMBLE = struct.Struct("<4sII")


class IllConditionedCovarianceError(ValueError):
    """Covariance too ill-conditioned for a plain Hotelling inverse; use the RHO template."""


class SingularCovarianceError(ValueError):
    """Every singular value was truncated (or the covariance is zero)."""


def _as_vectors(samples: np.ndarray) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :]
    return arr.reshape(arr.shape[0], -1)


@dataclass
class _Moments:
    n: int = 0
    mean: Optional[np.ndarray] = None
    m2: Optional[np.ndarray] = None

    def update(self, batch: np.ndarray) -> None:
        x = _as_vectors(batch)
        m = x.shape[0]
        if m == 0:
            return
        batch_mean = x.mean(axis=0)
        centered = x - batch_mean
        self.merge(_Moments(m, batch_mean, centered.T @ centered))

    def merge(self, other: "_Moments") -> None:
        if other.n == 0:
            return
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean.copy(), other.m2.copy()
            return
        if other.mean.shape != self.mean.shape:
            raise ValueError(f"Sample dimension {other.mean.shape[0]} does not match {self.mean.shape[0]}.")
        total = self.n + other.n
        delta = other.mean - self.mean
        self.m2 = self.m2 + other.m2 + np.outer(delta, delta) * (self.n * other.n / total)
        self.mean = self.mean + delta * (other.n / total)
        self.n = total


class StatsAccumulator:
    """Streaming per-class mean/covariance (pairwise merge), mergeable across workers."""

    def __init__(self) -> None:
        self._classes = {0: _Moments(), 1: _Moments()}

    def update(self, samples: np.ndarray, label: int) -> "StatsAccumulator":
        self._classes[int(label)].update(samples)
        return self

    def update_labeled(self, samples: np.ndarray, labels: np.ndarray) -> "StatsAccumulator":
        x = _as_vectors(samples)
        labels = np.asarray(labels).reshape(-1)
        for label in (0, 1):
            chunk = x[labels == label]
            if chunk.shape[0]:
                self._classes[label].update(chunk)
        return self

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        for label in (0, 1):
            self._classes[label].merge(other._classes[label])
        return self

    def counts(self) -> tuple[int, int]:
        return self._classes[0].n, self._classes[1].n

    def finalize(self) -> "CovarianceEstimate":
        c0, c1 = self._classes[0], self._classes[1]
        if c0.n < 2 or c1.n < 2:
            raise ValueError(f"Need at least 2 samples per class, got n0={c0.n}, n1={c1.n}.")
        k0 = c0.m2 / (c0.n - 1)
        k1 = c1.m2 / (c1.n - 1)
        covariance = 0.5 * (k0 + k1)
        covariance = 0.5 * (covariance + covariance.T)
        return CovarianceEstimate(
            mean_diff=c1.mean - c0.mean,
            covariance=covariance,
            mean0=c0.mean,
            mean1=c1.mean,
            n0=c0.n,
            n1=c1.n,
        )


@dataclass
class CovarianceEstimate:
    mean_diff: np.ndarray
    covariance: np.ndarray
    mean0: np.ndarray
    mean1: np.ndarray
    n0: int
    n1: int
    _svd: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return int(self.mean_diff.shape[0])

    def svd(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(U, s, Vh)`` with singular values in descending order, computed once."""
        if self._svd is None:
            self._svd = np.linalg.svd(self.covariance, hermitian=True)
        return self._svd

    @property
    def singular_values(self) -> np.ndarray:
        return self.svd()[1]

    @classmethod
    def from_moments(cls, mean_diff: np.ndarray, covariance: np.ndarray) -> "CovarianceEstimate":
        """Wrap known statistics (e.g. analytic ones) without samples."""
        mean_diff = np.asarray(mean_diff, dtype=np.float64).reshape(-1)
        covariance = np.asarray(covariance, dtype=np.float64)
        if covariance.shape != (mean_diff.size, mean_diff.size):
            raise ValueError(f"Covariance {covariance.shape} does not match mean_diff length {mean_diff.size}.")
        zeros = np.zeros_like(mean_diff)
        return cls(mean_diff, covariance, zeros, mean_diff.copy(), 0, 0)


def estimate_stats(class0: np.ndarray, class1: np.ndarray) -> CovarianceEstimate:
    """Unbiased per-class covariances averaged, ``mean_diff = mean1 - mean0``."""
    acc = StatsAccumulator()
    acc.update(class0, 0)
    acc.update(class1, 1)
    return acc.finalize()


@dataclass(frozen=True)
class LinearTemplate:
    weights: np.ndarray
    kind: str
    lam: Optional[float] = None
    rank: Optional[int] = None
    patch_shape: Optional[tuple[int, int]] = None

    def __post_init__(self) -> None:
        if self.kind not in TEMPLATE_KINDS:
            raise ValueError(f"Unsupported template kind: {self.kind}. Supported values: {', '.join(TEMPLATE_KINDS)}.")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("Template weights must be finite.")

    @property
    def label(self) -> str:
        return self.kind if self.lam is None else f"{self.kind}(lambda={self.lam:.3g})"


def _spectral_solve(stats: CovarianceEstimate, keep: int) -> np.ndarray:
    u, s, vh = stats.svd()
    coeff = (u[:, :keep].T @ stats.mean_diff) / s[:keep]
    return vh[:keep].T @ coeff


def hotelling_template(stats: CovarianceEstimate, *, condition_limit: float = HO_CONDITION_LIMIT) -> LinearTemplate:
    """``w = K^-1 mean_diff`` via the cached spectral decomposition."""
    s = stats.singular_values
    if s.size == 0 or s[-1] <= 0 or s[0] / s[-1] > condition_limit:
        cond = np.inf if s.size == 0 or s[-1] <= 0 else s[0] / s[-1]
        raise IllConditionedCovarianceError(
            f"Covariance condition number {cond:.3g} exceeds {condition_limit:.3g}; use the RHO template."
        )
    return LinearTemplate(_spectral_solve(stats, s.size), "HO", rank=int(s.size))


def rho_rank(stats: CovarianceEstimate, lam: float) -> int:
    """Number of singular values kept: ``sigma_i >= lam * sigma_1`` (and positive)."""
    s = stats.singular_values
    if s.size == 0:
        return 0
    return int(np.count_nonzero((s >= float(lam) * s[0]) & (s > 0)))


def rho_template(stats: CovarianceEstimate, lam: float, *, kind: str = "RHO") -> LinearTemplate:
    if not 0.0 <= float(lam) <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}.")
    keep = rho_rank(stats, lam)
    if keep == 0:
        raise SingularCovarianceError(f"All singular values truncated at lambda={lam:g}.")
    return LinearTemplate(_spectral_solve(stats, keep), kind, lam=float(lam), rank=keep)


def lambda_grid(lo: float = 1e-9, hi: float = 1e-4, per_decade: int = 6) -> np.ndarray:
    if not 0 < lo <= hi:
        raise ValueError(f"lambda grid needs 0 < lo <= hi, got {lo}, {hi}.")
    if int(per_decade) < 1:
        raise ValueError(f"per_decade must be >= 1, got {per_decade}.")
    decades = np.log10(hi) - np.log10(lo)
    count = int(round(decades * per_decade)) + 1
    return np.logspace(np.log10(lo), np.log10(hi), max(count, 1))


@dataclass(frozen=True)
class RhoSelection:
    lam: float
    template: LinearTemplate
    sweep: pd.DataFrame


def select_rho_lambda(
    stats: CovarianceEstimate,
    val_class0: np.ndarray,
    val_class1: np.ndarray,
    grid: Optional[Iterable[float]] = None,
) -> RhoSelection:
    """Validation AUC per lambda; the argmax wins and ties go to the smaller lambda."""
    lams = sorted(float(v) for v in (lambda_grid() if grid is None else grid))
    if not lams:
        raise ValueError("lambda grid is empty.")
    x0 = _as_vectors(val_class0)
    x1 = _as_vectors(val_class1)
    records = []
    best: Optional[tuple[float, LinearTemplate, float]] = None
    for lam in lams:
        try:
            template = rho_template(stats, lam)
        except SingularCovarianceError:
            records.append({"lambda": lam, "rank": 0, "auc": np.nan})
            continue
        value = compute_auc(x0 @ template.weights, x1 @ template.weights).auc
        records.append({"lambda": lam, "rank": template.rank, "auc": value})
        if best is None or value > best[2]:
            best = (lam, template, value)
    if best is None:
        raise SingularCovarianceError("Every lambda on the grid truncated all singular values.")
    logger.info("Selected RHO lambda %.3g (rank %d, validation AUC %.4f)", best[0], best[1].rank, best[2])
    return RhoSelection(lam=best[0], template=best[1], sweep=pd.DataFrame.from_records(records))


def cho_template(channel_stats: CovarianceEstimate, lam: Optional[float] = None) -> LinearTemplate:
    """Hotelling template in channel space, optionally regularized with the RHO rule."""
    if lam is None:
        try:
            template = hotelling_template(channel_stats)
        except IllConditionedCovarianceError as exc:
            raise SingularCovarianceError(
                f"Channelized covariance is singular; set a regularization lambda. ({exc})"
            ) from exc
        return LinearTemplate(template.weights, "CHO", rank=template.rank)
    return rho_template(channel_stats, lam, kind="CHO")


def score_linear(template: LinearTemplate, data: np.ndarray) -> np.ndarray | float:
    """Inner product with one vector/image or a stack of them."""
    arr = np.asarray(data, dtype=np.float64)
    n = template.weights.size
    if arr.size == n:
        return float(arr.reshape(-1) @ template.weights)
    flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr
    if flat.ndim != 2 or flat.shape[1] != n:
        raise ValueError(f"Template has {n} weights but data has shape {arr.shape}.")
    return flat @ template.weights


def save_template(path: str | Path, template: LinearTemplate) -> Path:
    path = Path(path)
    header = {
        "kind": template.kind,
        "lam": template.lam,
        "rank": template.rank,
        "patch_shape": list(template.patch_shape) if template.patch_shape else None,
        "length": int(template.weights.size),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(template.weights, dtype="<f4").tobytes()

    def _write(tmp_path: Path) -> None:
        with tmp_path.open("wb") as handle:
            handle.write(_TEMPLATE_PREAMBLE.pack(TEMPLATE_MAGIC, TEMPLATE_VERSION, len(header_bytes)))
            handle.write(header_bytes)
            handle.write(payload)

    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(path, _write)
    return path


def load_template(path: str | Path) -> LinearTemplate:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _TEMPLATE_PREAMBLE.size:
        raise ValueError(f"{path}: file too short for a template.")
    magic, version, header_len = _TEMPLATE_PREAMBLE.unpack_from(raw, 0)
    if magic != TEMPLATE_MAGIC or version != TEMPLATE_VERSION:
        raise ValueError(f"{path}: not a version-{TEMPLATE_VERSION} template file.")
    offset = _TEMPLATE_PREAMBLE.size
    header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    length = int(header["length"])
    if len(raw) != offset + 4 * length:
        raise ValueError(f"{path}: template payload is truncated.")
    weights = np.frombuffer(raw, dtype="<f4", count=length, offset=offset).astype(np.float64)
    patch = header.get("patch_shape")
    return LinearTemplate(
        weights=weights,
        kind=header["kind"],
        lam=header.get("lam"),
        rank=header.get("rank"),
        patch_shape=tuple(patch) if patch else None,
    )

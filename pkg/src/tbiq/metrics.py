"""ROC analysis (midrank AUC, DeLong intervals, paired comparison) and traditional IQ metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats as scipy_stats
from skimage.metrics import mean_squared_error, peak_signal_noise_ratio, structural_similarity
from sklearn.metrics import roc_curve

DEFAULT_CI_LEVEL = 0.95
PSNR_INF = math.inf


def z_value(level: float) -> float:
    if not 0 < float(level) < 1:
        raise ValueError(f"Confidence level must lie in (0, 1), got {level}.")
    return float(scipy_stats.norm.ppf(0.5 + float(level) / 2.0))


@dataclass(frozen=True)
class RocResult:
    auc: float
    delong_variance: float
    ci_lo: float
    ci_hi: float
    level: float
    n0: int
    n1: int
    scores0: np.ndarray = field(repr=False)
    scores1: np.ndarray = field(repr=False)
    v10: np.ndarray = field(repr=False)
    v01: np.ndarray = field(repr=False)
    test_set_id: Optional[str] = None

    @property
    def ci(self) -> tuple[float, float]:
        return self.ci_lo, self.ci_hi


def _check_scores(scores0: Sequence[float], scores1: Sequence[float], minimum: int) -> tuple[np.ndarray, np.ndarray]:
    s0 = np.asarray(scores0, dtype=np.float64).reshape(-1)
    s1 = np.asarray(scores1, dtype=np.float64).reshape(-1)
    if s0.size < minimum or s1.size < minimum:
        raise ValueError(f"Each class needs at least {minimum} score(s), got n0={s0.size}, n1={s1.size}.")
    if not (np.all(np.isfinite(s0)) and np.all(np.isfinite(s1))):
        raise ValueError("Scores must be finite.")
    return s0, s1


def _components(s0: np.ndarray, s1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Structural components from midranks: V10 over class-1 samples, V01 over class-0 samples."""
    n0, n1 = s0.size, s1.size
    combined = scipy_stats.rankdata(np.concatenate([s0, s1]))
    within0 = scipy_stats.rankdata(s0)
    within1 = scipy_stats.rankdata(s1)
    v10 = (combined[n0:] - within1) / n0
    v01 = 1.0 - (combined[:n0] - within0) / n1
    return v10, v01


def auc(
    scores_class0: Sequence[float],
    scores_class1: Sequence[float],
    *,
    test_set_id: Optional[str] = None,
) -> RocResult:
    """Mann-Whitney AUC with ties counted one half; variance left undefined."""
    s0, s1 = _check_scores(scores_class0, scores_class1, 1)
    v10, v01 = _components(s0, s1)
    value = float(v10.mean())
    return RocResult(value, math.nan, value, value, math.nan, s0.size, s1.size, s0, s1, v10, v01, test_set_id)


def delong_ci(
    scores0: Sequence[float],
    scores1: Sequence[float],
    level: float = DEFAULT_CI_LEVEL,
    *,
    test_set_id: Optional[str] = None,
) -> RocResult:
    s0, s1 = _check_scores(scores0, scores1, 2)
    v10, v01 = _components(s0, s1)
    value = float(v10.mean())
    variance = float(np.var(v10, ddof=1) / s1.size + np.var(v01, ddof=1) / s0.size)
    variance = max(variance, 0.0)
    half = z_value(level) * math.sqrt(variance)
    lo = min(max(value - half, 0.0), value)
    hi = max(min(value + half, 1.0), value)
    return RocResult(value, variance, lo, hi, float(level), s0.size, s1.size, s0, s1, v10, v01, test_set_id)


@dataclass(frozen=True)
class AucComparison:
    auc_a: float
    auc_b: float
    difference: float
    variance: float
    z: float
    p_value: float
    significant: bool


def auc_compare(result_a: RocResult, result_b: RocResult, alpha: float = 0.05) -> AucComparison:
    """Paired DeLong z-test for two observers scored on the same test images."""
    if result_a.test_set_id != result_b.test_set_id:
        raise ValueError(
            f"AUC comparison needs the same test set, got {result_a.test_set_id!r} and {result_b.test_set_id!r}."
        )
    if (result_a.n0, result_a.n1) != (result_b.n0, result_b.n1):
        raise ValueError(
            f"Paired results differ in size: ({result_a.n0}, {result_a.n1}) vs ({result_b.n0}, {result_b.n1})."
        )
    n0, n1 = result_a.n0, result_a.n1
    if n0 < 2 or n1 < 2:
        raise ValueError("Paired comparison needs at least 2 scores per class.")
    cov10 = np.cov(np.vstack([result_a.v10, result_b.v10]), ddof=1)
    cov01 = np.cov(np.vstack([result_a.v01, result_b.v01]), ddof=1)
    sigma = cov10 / n1 + cov01 / n0
    variance = float(sigma[0, 0] + sigma[1, 1] - 2.0 * sigma[0, 1])
    difference = float(result_a.auc - result_b.auc)
    if variance <= 1e-300:
        z = 0.0 if difference == 0 else math.copysign(math.inf, difference)
    else:
        z = difference / math.sqrt(variance)
    p_value = 1.0 if z == 0 else float(2.0 * scipy_stats.norm.sf(abs(z)))
    return AucComparison(
        auc_a=float(result_a.auc),
        auc_b=float(result_b.auc),
        difference=difference,
        variance=max(variance, 0.0),
        z=float(z),
        p_value=p_value,
        significant=bool(p_value < alpha),
    )


def roc_points(result: RocResult) -> pd.DataFrame:
    """Empirical ROC operating points (all thresholds kept)."""
    labels = np.concatenate([np.zeros(result.n0), np.ones(result.n1)])
    scores = np.concatenate([result.scores0, result.scores1])
    fpr, tpr, thresholds = roc_curve(labels, scores, drop_intermediate=False)
    return pd.DataFrame({"fpr": fpr, "tpr": tpr, "threshold": thresholds})


# -----------------------------------------------------------------------------
# Traditional image-quality metrics
# -----------------------------------------------------------------------------
def dynamic_range(references: np.ndarray) -> float:
    """``max - min`` over a reference ensemble."""
    arr = np.asarray(references, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("Reference ensemble is empty.")
    value = float(arr.max() - arr.min())
    if value <= 0:
        raise ValueError("Reference ensemble has zero dynamic range.")
    return value


SSIM_WINDOW = 11


def ssim_window(shape: Sequence[int]) -> int:
    """Largest odd SSIM window up to 11 that fits inside ``shape``."""
    side = min(int(v) for v in shape)
    if side < 1:
        raise ValueError(f"SSIM needs a non-empty image, got shape {tuple(shape)}.")
    return min(SSIM_WINDOW, side if side % 2 else side - 1)


def iq_metrics(ref: np.ndarray, test: np.ndarray, data_range: float) -> tuple[float, float, float]:
    """Per-image ``(mse, psnr, ssim)``; PSNR is ``inf`` when the images are identical.

    SSIM uses the Gaussian 11x11 window (sigma 1.5); crops smaller than 11 px
    shrink it to the largest odd size that fits.
    """
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"Reference {ref.shape} and test {test.shape} dimensions differ.")
    if ref.ndim != 2:
        raise ValueError(f"iq_metrics expects 2-D images, got {ref.shape}.")
    mse = float(mean_squared_error(ref, test))
    psnr = PSNR_INF if mse == 0 else float(peak_signal_noise_ratio(ref, test, data_range=data_range))
    ssim = float(
        structural_similarity(
            ref,
            test,
            data_range=data_range,
            win_size=ssim_window(ref.shape),
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
        )
    )
    return mse, psnr, ssim


@dataclass(frozen=True)
class IqReport:
    ensemble_mse: float
    psnr: float
    ssim: float
    data_range: float
    per_image: pd.DataFrame = field(repr=False)


def iq_report(refs: np.ndarray, tests: np.ndarray, data_range: Optional[float] = None) -> IqReport:
    refs = np.asarray(refs, dtype=np.float64)
    tests = np.asarray(tests, dtype=np.float64)
    if refs.shape != tests.shape or refs.ndim != 3:
        raise ValueError(f"Expected matching (n, h, w) stacks, got {refs.shape} and {tests.shape}.")
    data_range = dynamic_range(refs) if data_range is None else float(data_range)
    rows = [iq_metrics(r, t, data_range) for r, t in zip(refs, tests)]
    per_image = pd.DataFrame(rows, columns=["mse", "psnr", "ssim"])
    ensemble_mse = float(per_image["mse"].mean())
    psnr = PSNR_INF if ensemble_mse == 0 else 10.0 * math.log10(data_range**2 / ensemble_mse)
    return IqReport(ensemble_mse, psnr, float(per_image["ssim"].mean()), data_range, per_image)


def paired_difference_ci(
    a: Sequence[float],
    b: Sequence[float],
    level: float = DEFAULT_CI_LEVEL,
) -> tuple[float, float, float]:
    """Mean of ``a - b`` with a Student-t confidence interval."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = diff.size
    if n < 2:
        raise ValueError("Paired confidence interval needs at least 2 pairs.")
    mean = float(diff.mean())
    sem = float(diff.std(ddof=1) / math.sqrt(n))
    if sem == 0:
        return mean, mean, mean
    half = float(scipy_stats.t.ppf(0.5 + level / 2.0, df=n - 1)) * sem
    return mean, mean - half, mean + half

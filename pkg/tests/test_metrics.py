import math

import numpy as np
import pytest
from sklearn.metrics import auc as trapezoid_area

from tbiq.metrics import (
    auc,
    auc_compare,
    delong_ci,
    dynamic_range,
    iq_metrics,
    iq_report,
    paired_difference_ci,
    roc_points,
    ssim_window,
    z_value,
)


def _brute_force_auc(s0, s1):
    total = 0.0
    for a in s1:
        for b in s0:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(s0) * len(s1))


def test_auc_matches_pair_counting_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n0, n1 = rng.integers(1, 12, size=2)
        # coarse integer scores force plenty of ties
        s0 = rng.integers(0, 5, size=n0).astype(float)
        s1 = rng.integers(0, 6, size=n1).astype(float)
        assert auc(s0, s1).auc == pytest.approx(_brute_force_auc(s0, s1), abs=1e-12)


def test_auc_extremes():
    assert auc([0.0, 1.0], [2.0, 3.0]).auc == 1.0
    assert auc([2.0, 3.0], [0.0, 1.0]).auc == 0.0
    assert auc([1.0, 1.0], [1.0]).auc == 0.5


def test_delong_interval_contains_auc_and_stays_in_unit_range():
    rng = np.random.default_rng(1)
    result = delong_ci(rng.normal(size=50), rng.normal(1.0, size=60), 0.95, test_set_id="test")
    assert result.ci_lo <= result.auc <= result.ci_hi
    assert 0.0 <= result.ci_lo and result.ci_hi <= 1.0
    assert result.n0 == 50 and result.n1 == 60
    assert result.test_set_id == "test"

    perfect = delong_ci([0.0, 1.0], [2.0, 3.0])
    assert perfect.auc == 1.0
    assert perfect.ci_hi == 1.0


def test_delong_needs_two_scores_per_class():
    with pytest.raises(ValueError, match="at least 2"):
        delong_ci([0.1], [0.2, 0.3])
    with pytest.raises(ValueError, match="finite"):
        auc([0.1, math.nan], [0.2])


@pytest.mark.slow
def test_delong_variance_agrees_with_bootstrap():
    rng = np.random.default_rng(2)
    s0 = rng.normal(size=150)
    s1 = rng.normal(0.8, size=150)
    result = delong_ci(s0, s1)
    boot = []
    for _ in range(2000):
        boot.append(auc(rng.choice(s0, s0.size), rng.choice(s1, s1.size)).auc)
    assert result.delong_variance == pytest.approx(np.var(boot, ddof=1), rel=0.2)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_delong_interval_matches_percentile_bootstrap(seed):
    rng = np.random.default_rng(100 + seed)
    s0 = rng.normal(size=200)
    s1 = rng.normal(0.7, size=200)
    result = delong_ci(s0, s1, 0.95)
    boot = [auc(rng.choice(s0, s0.size), rng.choice(s1, s1.size)).auc for _ in range(2000)]
    lo, hi = np.percentile(boot, [2.5, 97.5])
    assert result.ci_lo == pytest.approx(lo, abs=0.02)
    assert result.ci_hi == pytest.approx(hi, abs=0.02)


def test_z_value_for_common_levels():
    assert z_value(0.95) == pytest.approx(1.959964, abs=1e-5)
    with pytest.raises(ValueError):
        z_value(1.0)


def test_auc_compare_requires_the_same_test_set():
    rng = np.random.default_rng(3)
    s0, s1 = rng.normal(size=20), rng.normal(1.0, size=20)
    a = delong_ci(s0, s1, test_set_id="test")
    b = delong_ci(s0 * 0.5, s1, test_set_id="val")
    with pytest.raises(ValueError, match="same test set"):
        auc_compare(a, b)


def test_auc_compare_of_identical_observers_is_not_significant():
    rng = np.random.default_rng(4)
    s0, s1 = rng.normal(size=30), rng.normal(1.0, size=30)
    a = delong_ci(s0, s1, test_set_id="test")
    same = auc_compare(a, delong_ci(2.0 * s0 + 1.0, 2.0 * s1 + 1.0, test_set_id="test"))
    assert same.difference == 0.0
    assert same.p_value == 1.0
    assert not same.significant

    noisy = delong_ci(s0 + rng.normal(0, 3.0, 30), s1 + rng.normal(0, 3.0, 30), test_set_id="test")
    cmp = auc_compare(a, noisy)
    assert cmp.variance > 0
    assert 0.0 <= cmp.p_value <= 1.0


def test_roc_points_span_the_unit_square():
    points = roc_points(delong_ci([0.1, 0.4, 0.35], [0.8, 0.3, 0.9]))
    assert points["fpr"].iloc[0] == 0.0 and points["tpr"].iloc[0] == 0.0
    assert points["fpr"].iloc[-1] == 1.0 and points["tpr"].iloc[-1] == 1.0


def test_iq_metrics_for_identical_images():
    img = np.random.default_rng(5).uniform(size=(16, 16))
    mse, psnr, ssim = iq_metrics(img, img, 1.0)
    assert mse == 0.0
    assert math.isinf(psnr)
    assert ssim == pytest.approx(1.0)


def test_iq_report_uses_ensemble_mse_for_psnr():
    rng = np.random.default_rng(6)
    refs = rng.uniform(size=(3, 16, 16))
    tests = refs + 0.01
    report = iq_report(refs, tests)
    assert report.data_range == pytest.approx(dynamic_range(refs))
    assert report.ensemble_mse == pytest.approx(1e-4)
    assert report.psnr == pytest.approx(10 * math.log10(report.data_range**2 / 1e-4))
    assert len(report.per_image) == 3


def test_dynamic_range_rejects_flat_references():
    with pytest.raises(ValueError, match="zero dynamic range"):
        dynamic_range(np.ones((2, 4, 4)))


def test_paired_difference_ci():
    mean, lo, hi = paired_difference_ci([0.8, 0.82, 0.79, 0.81], [0.7, 0.71, 0.69, 0.72])
    assert mean == pytest.approx(0.1)
    assert lo < mean < hi
    assert paired_difference_ci([1.0, 2.0], [0.0, 1.0]) == (1.0, 1.0, 1.0)


def test_auc_flips_under_negation_and_class_swap():
    rng = np.random.default_rng(7)
    s0, s1 = rng.normal(size=40), rng.normal(0.6, size=35)
    value = auc(s0, s1).auc
    assert auc(-s0, -s1).auc == pytest.approx(1.0 - value, abs=1e-12)
    assert auc(s1, s0).auc == pytest.approx(1.0 - value, abs=1e-12)


@pytest.mark.parametrize("transform", [lambda s: 3.0 * s + 7.0, np.exp, np.arctan])
def test_auc_invariant_under_increasing_transforms(transform):
    rng = np.random.default_rng(8)
    s0, s1 = rng.normal(size=50), rng.normal(0.5, size=45)
    base = delong_ci(s0, s1)
    moved = delong_ci(transform(s0), transform(s1))
    assert moved.auc == pytest.approx(base.auc, abs=1e-12)
    assert moved.delong_variance == pytest.approx(base.delong_variance, abs=1e-12)


def test_midrank_auc_equals_trapezoid_under_empirical_roc():
    rng = np.random.default_rng(9)
    for _ in range(50):
        n0, n1 = rng.integers(2, 15, size=2)
        s0 = rng.integers(0, 4, size=n0).astype(float)
        s1 = rng.integers(0, 5, size=n1).astype(float)
        result = delong_ci(s0, s1)
        points = roc_points(result)
        assert trapezoid_area(points["fpr"], points["tpr"]) == pytest.approx(result.auc, abs=1e-12)


def test_delong_variance_vanishes_for_separated_constant_classes():
    result = delong_ci(np.zeros(20), np.ones(25))
    assert result.auc == 1.0
    assert result.delong_variance == 0.0


def test_auc_compare_detects_a_dominating_observer():
    rng = np.random.default_rng(10)
    s0, s1 = rng.normal(size=50), rng.normal(0.4, size=50)
    weak = delong_ci(s0, s1, test_set_id="test")
    # every class-1 score above every class-0 score
    strong = delong_ci(np.linspace(0.0, 1.0, 50), np.linspace(2.0, 3.0, 50), test_set_id="test")
    result = auc_compare(strong, weak)
    assert result.difference > 0
    assert result.significant


def _paired_permutation_p(a0, a1, b0, b1, rng, n_perm=1000):
    observed = abs(auc(a0, a1).auc - auc(b0, b1).auc)
    hits = 0
    for _ in range(n_perm):
        m0 = rng.random(a0.size) < 0.5
        m1 = rng.random(a1.size) < 0.5
        x0, y0 = np.where(m0, b0, a0), np.where(m0, a0, b0)
        x1, y1 = np.where(m1, b1, a1), np.where(m1, a1, b1)
        if abs(auc(x0, x1).auc - auc(y0, y1).auc) >= observed - 1e-12:
            hits += 1
    return (hits + 1) / (n_perm + 1)


@pytest.mark.slow
def test_auc_compare_agrees_with_paired_permutation_test():
    compared = 0
    for seed in range(12):
        rng = np.random.default_rng(200 + seed)
        n = 60
        truth0, truth1 = rng.normal(size=n), rng.normal(2.0, size=n)
        # even seeds: a much sharper observer; odd seeds: two observers of equal quality
        a_noise, b_noise = (0.3, 2.0) if seed % 2 == 0 else (0.7, 0.7)
        a0, a1 = truth0 + rng.normal(0, a_noise, n), truth1 + rng.normal(0, a_noise, n)
        b0, b1 = truth0 + rng.normal(0, b_noise, n), truth1 + rng.normal(0, b_noise, n)
        result = auc_compare(delong_ci(a0, a1, test_set_id="t"), delong_ci(b0, b1, test_set_id="t"))
        if 0.01 <= result.p_value <= 0.2:
            continue
        compared += 1
        p_perm = _paired_permutation_p(a0, a1, b0, b1, rng)
        assert (p_perm < 0.05) == result.significant
    assert compared >= 5


@pytest.mark.parametrize(("shape", "expected"), [((64, 64), 11), ((12, 20), 11), ((8, 8), 7), ((10, 9), 9), ((2, 5), 1)])
def test_ssim_window_fits_small_images(shape, expected):
    assert ssim_window(shape) == expected


def test_iq_report_on_small_crops():
    rng = np.random.default_rng(11)
    refs = rng.random((3, 8, 8))
    tests = refs + rng.normal(0, 0.05, refs.shape)
    report = iq_report(refs, tests)
    assert len(report.per_image) == 3
    assert -1.0 <= report.ssim < 1.0
    assert iq_metrics(refs[0], refs[0], 1.0)[2] == pytest.approx(1.0)

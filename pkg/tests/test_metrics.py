import logging
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from crloc.metrics import (Calibration, FixationTarget, GazeRecord, accuracy, apply_calibration,
                           fit_calibration, fit_polynomial, pcr_vectors, rms_s2s, std_precision)

RATE = 500.0  # 0.2 s window = 100 samples

GRID = [(x, y) for y in (-1.0, 0.0, 1.0) for x in (-1.0, 0.0, 1.0)]
COEF = np.array([1.0, 2.0, 3.0, 0.1, -0.2, 0.05])


def poly(p, c=COEF):
    x, y = p
    return c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * y * y + c[5] * x * y


def rec(samples, rate=RATE):
    return GazeRecord.uniform(samples, rate)


# --- record ---------------------------------------------------------------------

def test_record_rejects_bad_timestamps():
    with pytest.raises(ValueError):
        GazeRecord(np.array([0.0, 0.002, 0.002]), np.zeros((3, 2)), RATE)
    with pytest.raises(ValueError, match="inconsistent"):
        GazeRecord(np.arange(10) / 400.0, np.zeros((10, 2)), RATE)


def test_fixation_target_order():
    with pytest.raises(ValueError):
        FixationTarget((0.0, 0.0), 1.0, 1.0)


# --- rms_s2s / std ----------------------------------------------------------------

def test_constant_signal_zero():
    r = rec(np.tile([3.0, -2.0], (400, 1)))
    assert rms_s2s(r) == 0.0 and std_precision(r) == 0.0


def test_square_wave_rms_one():
    s = np.zeros((400, 2))
    s[1::2, 0] = 1.0
    assert rms_s2s(rec(s)) == 1.0


def test_single_step_ignored_by_median():
    s = np.zeros((1000, 2))
    s[900:, 0] = 10.0  # only ~100 of 901 windows contain the step
    assert rms_s2s(rec(s)) == 0.0
    assert std_precision(rec(s)) == 0.0


def test_std_two_valued_window():
    # a 2-sample window holding (0,0) and (2,0)
    r = GazeRecord.uniform([[0.0, 0.0], [2.0, 0.0]], 10.0)
    assert std_precision(r) == 1.0


def test_too_short_trace():
    with pytest.raises(ValueError):
        rms_s2s(rec(np.zeros((50, 2))))
    with pytest.raises(ValueError):
        std_precision(rec(np.zeros((50, 2))))


def test_window_length_uses_rate():
    # 0.2 s at 10 Hz = 2 samples: each window is a single difference
    s = np.array([[0.0, 0], [1, 0], [1, 0], [2, 0], [5, 0]])  # diffs 1, 0, 1, 3
    assert rms_s2s(GazeRecord.uniform(s, 10.0)) == 1.0


@given(st.integers(0, 2**32 - 1), st.floats(-100, 100), st.floats(-100, 100), st.floats(0.1, 10))
def test_translation_and_scale(seed, dx, dy, c):
    s = np.random.default_rng(seed).normal(size=(300, 2))
    base_r, base_s = rms_s2s(rec(s)), std_precision(rec(s))
    shifted = s + [dx, dy]
    assert rms_s2s(rec(shifted)) == pytest.approx(base_r, rel=1e-9)
    assert std_precision(rec(shifted)) == pytest.approx(base_s, rel=1e-9)
    assert rms_s2s(rec(c * s)) == pytest.approx(c * base_r, rel=1e-12)
    assert std_precision(rec(c * s)) == pytest.approx(c * base_s, rel=1e-12)


def test_white_noise_ratio_sqrt2():
    s = np.random.default_rng(11).normal(0, 0.7, size=(100_000, 2))
    r = rec(s)
    assert rms_s2s(r) / std_precision(r) == pytest.approx(math.sqrt(2), rel=0.10)


def test_isotropic_std_matches_monte_carlo():
    sigma = 1.3
    s = np.random.default_rng(3).normal(0, sigma, size=(50_000, 2))
    assert std_precision(rec(s)) == pytest.approx(sigma * math.sqrt(2), rel=0.05)


# --- calibration ------------------------------------------------------------------

def test_polynomial_recovery():
    vals = np.array([[poly(p), poly(p, -COEF)] for p in GRID])
    cal = fit_polynomial(GRID, vals)
    assert np.abs(cal.coefficients[0] - COEF).max() < 1e-9
    assert np.abs(cal.coefficients[1] + COEF).max() < 1e-9
    assert cal.residual_rms < 1e-9


def test_identity_calibration():
    cal = fit_polynomial(GRID, np.array(GRID))
    assert np.allclose(cal.coefficients[0], [0, 1, 0, 0, 0, 0], atol=1e-12)
    assert np.allclose(cal.coefficients[1], [0, 0, 1, 0, 0, 0], atol=1e-12)


def test_identical_inputs_rank_deficient():
    with pytest.raises(np.linalg.LinAlgError, match="rank"):
        fit_polynomial([(0.3, 0.3)] * 9, np.zeros((9, 2)))


def test_fit_is_least_squares_minimum():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(25, 2))
    vals = rng.normal(size=(25, 1))
    cal = fit_polynomial(pts, vals)
    X = np.column_stack([np.ones(25), pts[:, 0], pts[:, 1], pts[:, 0] ** 2, pts[:, 1] ** 2,
                         pts[:, 0] * pts[:, 1]])
    best = np.sum((X @ cal.coefficients[0] - vals[:, 0]) ** 2)
    for k in range(6):
        for eps in (1e-3, -1e-3):
            c = cal.coefficients[0].copy()
            c[k] += eps
            assert np.sum((X @ c - vals[:, 0]) ** 2) >= best


def test_zero_polynomial_gives_zero():
    cal = Calibration(np.zeros((2, 6)))
    assert np.all(apply_calibration(cal, np.random.default_rng(0).normal(size=(7, 2))) == 0)


def test_apply_reproduces_fit_points():
    vals = np.array([[poly(p), 2 * poly(p)] for p in GRID])
    cal = fit_polynomial(GRID, vals)
    assert np.allclose(apply_calibration(cal, GRID), vals, atol=1e-9)


def test_linear_calibration_affine_shift():
    # p(x + u, y + v) with linear terms only: a' = a + b u + c v, slopes unchanged
    a, b, c, u, v = 0.5, 2.0, -1.5, 0.3, -0.7
    cal = Calibration(np.array([[a, b, c, 0, 0, 0], [0, 0, 0, 0, 0, 0]], float))
    shifted = Calibration(np.array([[a + b * u + c * v, b, c, 0, 0, 0], [0] * 6], float))
    pts = np.random.default_rng(1).normal(size=(10, 2))
    assert np.allclose(apply_calibration(cal, pts + [u, v]), apply_calibration(shifted, pts))


def test_fit_calibration_uses_median_per_target():
    targets, samples = [], []
    for k, (gx, gy) in enumerate(GRID):
        targets.append(FixationTarget((10 * gx, 10 * gy), k * 1.0, k * 1.0 + 0.5))
        block = np.tile([gx, gy], (500, 1))
        block[:50] += 40.0  # outliers, a minority
        samples.append(block)
    pcr = rec(np.concatenate(samples))
    cal = fit_calibration(pcr, targets)
    assert np.allclose(apply_calibration(cal, GRID), 10 * np.array(GRID), atol=1e-9)


def test_pcr_vector_sign():
    assert np.array_equal(pcr_vectors([[10.0, 5.0]], [[7.0, 9.0]]), [[3.0, -4.0]])


# --- accuracy ------------------------------------------------------------------------

def _fixations(offset=(0.0, 0.0), burst=False):
    targets, samples = [], []
    for k, (gx, gy) in enumerate(GRID):
        targets.append(FixationTarget((gx, gy), k * 1.0, k * 1.0 + 1.0))
        block = np.tile([gx + offset[0], gy + offset[1]], (500, 1))
        if burst and k == 4:
            block[100:300] = [50.0, -50.0]
        samples.append(block)
    return rec(np.concatenate(samples)), targets


def test_accuracy_exact_zero():
    g, t = _fixations()
    assert accuracy(g, t) == 0.0


def test_accuracy_constant_offset():
    g, t = _fixations((0.5, 0.0))
    assert accuracy(g, t) == pytest.approx(0.5, abs=1e-12)


def test_accuracy_outlier_burst():
    a = accuracy(*_fixations((0.5, 0.0)))
    b = accuracy(*_fixations((0.5, 0.0), burst=True))
    assert a == b


def test_accuracy_repeated_targets_averaged():
    g = rec(np.concatenate([np.tile([1.0, 0.0], (500, 1)), np.tile([3.0, 0.0], (500, 1)),
                            np.tile([0.0, 5.0], (500, 1))]))
    t = [FixationTarget((0.0, 0.0), 0.0, 1.0), FixationTarget((0.0, 0.0), 1.0, 2.0),
         FixationTarget((0.0, 4.0), 2.0, 3.0)]
    # first position averages 1 and 3 -> 2, second is 1
    assert accuracy(g, t) == pytest.approx(1.5)


def test_accuracy_skips_empty_interval(caplog):
    g, t = _fixations((0.5, 0.0))
    t = t + [FixationTarget((0.0, 0.0), 100.0, 101.0)]
    with caplog.at_level(logging.WARNING):
        assert accuracy(g, t) == pytest.approx(0.5)
    assert "1 accuracy targets" in caplog.text

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage

from crloc.localize import (LocalizationError, ThresholdParams, apply_circular_mask, circularity,
                            com_oracle, fill_holes, intensity_centroid, radial_symmetry_center,
                            radial_symmetry_objective, select_blob, threshold_centroid)
from crloc.synthgen import CrSpec, GridPoint, SceneSpec, eval_scene, render_scene

PERMISSIVE = ThresholdParams(0.5, min_area=1, min_circularity=0.0)


def raster(points, shape=(20, 20)):
    img = np.zeros(shape)
    for x, y in points:
        img[y, x] = 1.0
    return img


# --- threshold_centroid -------------------------------------------------------------

def test_plus_shape_centroid():
    pts = [(9, 12), (10, 11), (10, 12), (10, 13), (11, 12)]
    img = raster(pts)
    res = threshold_centroid(img, PERMISSIVE)
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    assert res.center == (np.mean(xs), np.mean(ys)) == (10.0, 12.0)


def test_two_pixel_centroid():
    res = threshold_centroid(raster([(3, 5), (4, 5)]), PERMISSIVE)
    assert res.center == (3.5, 5.0)


def test_threshold_on_rendered_disk():
    img = render_scene(SceneSpec(CrSpec((89.5, 89.5), 10.0, 10000.0))).image
    x, y = threshold_centroid(img, ThresholdParams(0.5)).center
    assert math.hypot(x - 89.5, y - 89.5) < 0.05


def test_threshold_strict_comparison():
    img = np.zeros((9, 9))
    img[3:6, 3:6] = 0.5
    with pytest.raises(LocalizationError):
        threshold_centroid(img, ThresholdParams(0.5, min_circularity=0))


def test_no_blob_error():
    with pytest.raises(LocalizationError, match="no CR found"):
        threshold_centroid(np.zeros((10, 10)))


def test_area_filter_picks_conforming_blob():
    img = np.zeros((40, 40))
    img[2:20, 2:20] = 1.0  # too large
    img[30:34, 30:34] = 1.0
    res = threshold_centroid(img, ThresholdParams(0.5, min_area=4, max_area=100, min_circularity=0))
    assert res.center == (31.5, 31.5)


def test_circularity_filter():
    img = np.zeros((40, 40))
    img[5, 2:38] = 1.0  # a line, far from circular
    yy, xx = np.mgrid[0:40, 0:40]
    img[np.hypot(xx - 25, yy - 25) <= 4] = 1.0
    res = threshold_centroid(img, ThresholdParams(0.5, min_circularity=0.6))
    assert res.center == pytest.approx((25.0, 25.0))


def test_disk_circularity_near_one():
    yy, xx = np.mgrid[0:60, 0:60]
    disk = np.hypot(xx - 30, yy - 30) <= 15
    assert circularity(disk) > 0.9
    line = np.zeros((5, 40), bool)
    line[2, 2:38] = True
    assert circularity(line) < 0.6


def test_hole_is_filled_before_centroid():
    img = np.zeros((30, 30))
    yy, xx = np.mgrid[0:30, 0:30]
    d = np.hypot(xx - 14, yy - 15)
    img[(d <= 8)] = 1.0
    img[(np.hypot(xx - 16, yy - 15) <= 2)] = 0.0  # off-center hole
    res = threshold_centroid(img, ThresholdParams(0.5))
    assert res.center == pytest.approx((14.0, 15.0))


@given(st.floats(0.05, 0.9), st.floats(1.01, 5.0))
def test_threshold_invariant_to_monotone_rescale(t, gamma):
    img = render_scene(SceneSpec(CrSpec((20.3, 19.6), 5.0, 300.0), size=(40, 40))).image
    p = ThresholdParams(t, min_circularity=0)
    warped = img ** gamma
    t2 = t ** gamma
    if not 0 < t2 < 1:
        return
    try:
        a = threshold_centroid(img, p).center
    except LocalizationError:
        return
    assert threshold_centroid(warped, ThresholdParams(t2, min_circularity=0)).center == a


# --- fill_holes ----------------------------------------------------------------------

def test_ring_becomes_disk():
    yy, xx = np.mgrid[0:31, 0:31]
    d = np.hypot(xx - 15, yy - 15)
    ring = (d >= 9) & (d < 10.2)
    filled = fill_holes(ring)
    assert np.array_equal(filled, d < 10.2)


def test_fill_empty_unchanged():
    z = np.zeros((7, 9), bool)
    assert np.array_equal(fill_holes(z), z)


def test_fill_diagonal_gap_not_a_hole():
    # background touching the border only diagonally is still a hole under 4-connectivity
    b = np.ones((5, 5), bool)
    b[2, 2] = False
    assert fill_holes(b).all()


@given(st.integers(0, 2**32 - 1), st.floats(0.2, 0.8))
def test_fill_holes_matches_scipy_and_idempotent(seed, p):
    b = np.random.default_rng(seed).random((17, 23)) < p
    f = fill_holes(b)
    assert np.array_equal(f, ndimage.binary_fill_holes(b))
    assert np.array_equal(fill_holes(f), f)


# --- radial symmetry ---------------------------------------------------------------

def test_radial_symmetry_gaussian():
    img = render_scene(SceneSpec(CrSpec((89.5, 89.5), 8.0, 200.0))).image
    x, y = radial_symmetry_center(img).center
    assert math.hypot(x - 89.5, y - 89.5) < 0.02


def test_radial_symmetry_matches_grid_search():
    img = render_scene(SceneSpec(CrSpec((31.3, 30.8), 5.0, 200.0), size=(64, 64))).image
    x, y = radial_symmetry_center(img).center
    gx, gy = np.meshgrid(np.linspace(x - 0.05, x + 0.05, 41), np.linspace(y - 0.05, y + 0.05, 41))
    obj = radial_symmetry_objective(img, gx, gy)
    k = np.unravel_index(np.argmin(obj), obj.shape)
    assert abs(gx[k] - x) <= 0.0026 and abs(gy[k] - y) <= 0.0026
    assert radial_symmetry_objective(img, np.array(x), np.array(y)) <= obj.min() + 1e-9


def test_radial_symmetry_constant_image():
    with pytest.raises(LocalizationError, match="undefined center"):
        radial_symmetry_center(np.full((20, 20), 0.3))


def test_radial_symmetry_tiny_image():
    with pytest.raises(ValueError):
        radial_symmetry_center(np.zeros((2, 5)))


def _shift_pair(cx, cy):
    a = render_scene(SceneSpec(CrSpec((cx, cy), 4.0, 500.0), size=(48, 40))).image
    b = np.zeros_like(a)
    b[:, 1:] = a[:, :-1]
    return a, b


@pytest.mark.parametrize("method", [radial_symmetry_center, intensity_centroid,
                                    lambda im: threshold_centroid(im, ThresholdParams(0.5))])
def test_integer_shift_equivariance(method):
    # the CR tail is fully black at the borders, so this is a pure shift
    a, b = _shift_pair(20.3, 19.8)
    assert a[:, -1].max() == 0
    xa, ya = method(a).center
    xb, yb = method(b).center
    assert xb - xa == pytest.approx(1.0, abs=1e-9)
    assert yb - ya == pytest.approx(0.0, abs=1e-9)


def test_radial_symmetry_biased_toward_gray_side():
    errs = []
    for k in range(20):
        c = (89.0 + 0.05 * k, 89.5)
        img = render_scene(eval_scene(GridPoint(8.0, 10000.0, 0.0, 0.0, 128.0), c, (180, 180))).image
        errs.append(radial_symmetry_center(img).center[0] - c[0])
    # gray section sits on the left (negative x)
    assert np.mean(errs) < -0.1


# --- intensity centroid and oracle -----------------------------------------------------

def test_single_pixel_centroid():
    img = np.zeros((10, 10))
    img[3, 7] = 0.4
    assert intensity_centroid(img).center == pytest.approx((7.0, 3.0), abs=1e-12)


def test_two_pixel_intensity_centroid():
    img = np.zeros((3, 3))
    img[0, 0] = img[0, 2] = 1.0
    assert intensity_centroid(img).center == (1.0, 0.0)


def test_black_image_undefined():
    with pytest.raises(LocalizationError):
        intensity_centroid(np.zeros((4, 4)))


def test_centroid_symmetric_cr():
    img = render_scene(SceneSpec(CrSpec((89.5, 89.5), 6.0, 1000.0))).image
    x, y = intensity_centroid(img).center
    assert x == pytest.approx(89.5, abs=1e-9) and y == pytest.approx(89.5, abs=1e-9)


def test_oracle_symmetric_zero_error():
    x, y = com_oracle(CrSpec((89.5, 89.5), 4.0, 10000.0), (180, 180)).center
    assert abs(x - 89.5) < 1e-9 and abs(y - 89.5) < 1e-9


def _oracle_max_err(r, a, size=64):
    c = (size - 1) / 2
    return max(abs(com_oracle(CrSpec((c - 0.5 + 0.01 * k, c), r, a), (size, size)).center[0]
                   - (c - 0.5 + 0.01 * k)) for k in range(100))


def test_oracle_small_cr_worse():
    assert _oracle_max_err(2.0, 10000.0) >= 5 * _oracle_max_err(10.0, 10000.0)


def test_oracle_error_grows_with_amplitude_r4():
    errs = [_oracle_max_err(4.0, a) for a in (10, 50, 200, 1000, 10000)]
    assert all(b >= a for a, b in zip(errs, errs[1:]))


def test_oracle_equals_intensity_centroid():
    cr = CrSpec((30.27, 31.9), 3.0, 200.0)
    img = render_scene(SceneSpec(cr, size=(64, 64))).image
    a = np.array(com_oracle(cr, (64, 64)).center)
    b = np.array(intensity_centroid(img).center)
    assert np.all(np.abs(a - b) < 1e-12)


# --- mask ------------------------------------------------------------------------------

def test_mask_semantics():
    img = np.ones((21, 21))
    out = apply_circular_mask(img, (10, 10), 5)
    assert out[10, 16] == 0  # distance 6
    assert out[10, 15] == 1  # distance 5, on the edge stays
    assert out[10, 10] == 1
    assert np.array_equal(apply_circular_mask(out, (10, 10), 5), out)
    assert img.sum() == 21 * 21  # input untouched


def test_mask_rejects_nonpositive_radius():
    with pytest.raises(ValueError):
        apply_circular_mask(np.ones((3, 3)), (1, 1), 0)


@given(st.floats(1, 30), st.floats(0, 40), st.floats(0, 40))
def test_mask_idempotent(radius, cx, cy):
    img = np.random.default_rng(0).random((41, 41))
    once = apply_circular_mask(img, (cx, cy), radius)
    assert np.array_equal(apply_circular_mask(once, (cx, cy), radius), once)


def test_select_blob_returns_area_and_circularity():
    yy, xx = np.mgrid[0:30, 0:30]
    disk = np.hypot(xx - 15, yy - 15) <= 6
    mask, area, circ = select_blob(disk, ThresholdParams())
    assert area == disk.sum() and np.array_equal(mask, disk) and circ > 0.85

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from crloc.synthgen import (EVAL_EDGES, GRAY_LEFT, BackgroundSpec, CrSpec, EyeFrameSpec, GridPoint,
                            NoiseSpec, SceneSpec, StageDistributions, build_eval_grid, eval_scene,
                            gaussian_field, image_center, render_scene, sample_stage1,
                            sample_stage2, scene_from_record, scene_record, sigma_from_radius,
                            synth_eye_frame)

# r / sqrt(2 ln 10) at r = 2, evaluated with mpmath at 40 digits
SIGMA_2_10 = 0.93198120356931215059


def on_grid(img):
    k = img * 255
    return np.all(np.abs(k - np.rint(k)) < 1e-9) and img.min() >= 0 and img.max() <= 1


# --- sigma_from_radius -------------------------------------------------------

def test_sigma_unit_log():
    assert sigma_from_radius(3.7, math.exp(0.5)) == pytest.approx(3.7, rel=1e-15)


def test_sigma_reference_value():
    assert sigma_from_radius(2, 10) == pytest.approx(SIGMA_2_10, rel=1e-14)
    assert round(sigma_from_radius(2, 10), 5) == 0.93198


@pytest.mark.parametrize("amp", [1.0, 0.5, 0.0, -3.0])
def test_sigma_domain_error(amp):
    with pytest.raises(ValueError):
        sigma_from_radius(5, amp)


@given(st.floats(0.1, 60), st.floats(1.0001, 1e5))
def test_saturation_identity(r, amp):
    s = sigma_from_radius(r, amp)
    assert amp * math.exp(-r * r / (2 * s * s)) == pytest.approx(1.0, abs=1e-12)


def test_crspec_rejects_unit_amplitude():
    with pytest.raises(ValueError):
        CrSpec((5.0, 5.0), 3.0, 1.0)
    with pytest.raises(ValueError):
        CrSpec((5.0, 5.0), 0.0, 10.0)


# --- render_scene ------------------------------------------------------------

def test_saturated_disk_is_white():
    cr = CrSpec((40.3, 37.8), 7.0, 10000.0)
    img = render_scene(SceneSpec(cr, size=(80, 80))).image
    y, x = np.mgrid[0:80, 0:80]
    inside = np.hypot(x - 40.3, y - 37.8) < 7.0
    assert np.all(img[inside] == 1.0)


def test_centered_cr_mirror_symmetric():
    size = (61, 61)
    img = render_scene(SceneSpec(CrSpec(image_center(size), 6.0, 300.0), size=size)).image
    assert np.array_equal(img, img[:, ::-1])
    assert np.array_equal(img, img[::-1, :])


def test_even_size_center_symmetric():
    img = render_scene(SceneSpec(CrSpec((89.5, 89.5), 5.0, 50.0))).image
    assert np.array_equal(img, img[:, ::-1])
    assert np.array_equal(img, img[::-1, :])


def test_background_ramp():
    # vertical divider at x = 30, dark on the left, 4-px raised cosine
    bg = BackgroundSpec(True, (30.0, 0.0), -GRAY_LEFT, 10.0, 128.0, 4.0)
    img = render_scene(SceneSpec(None, bg, size=(60, 20))).image
    row = img[10] * 255
    assert np.allclose(img[:, :27] * 255, 10)
    assert np.allclose(img[:, 33:] * 255, 128)
    assert np.all(np.diff(row) >= 0)
    # 4-px span: x = 28..32 are inside [-2, 2] of the line
    assert 10 < row[29] < row[30] < row[31] < 128
    assert np.all(img == img[0])


def test_background_orientation_gray_left():
    p = GridPoint(4.0, 100.0, 0.0, 0.0, 128.0)
    img = render_scene(eval_scene(p, (40.0, 30.0), (80, 60))).image
    assert img[30, 5] == pytest.approx(128 / 255)
    assert img[30, 75] == pytest.approx(1 / 255)


@given(st.floats(0, 40), st.integers(0, 2**32))
def test_quantization_closure(sigma_n, seed):
    bg = BackgroundSpec(True, (20.0, 20.0), 1.0, 5.0, 140.0)
    s = SceneSpec(CrSpec((21.2, 19.7), 4.0, 500.0), bg, NoiseSpec(sigma_n, seed), size=(40, 40))
    assert on_grid(render_scene(s).image)


def test_render_deterministic():
    s = sample_stage1(StageDistributions.desk(), 123)
    a, b = render_scene(s).image, render_scene(s).image
    assert a.tobytes() == b.tobytes()


@given(st.floats(2, 50), st.floats(1.5, 500), st.floats(20, 40), st.floats(20, 40))
def test_monotone_in_distance(r, amp, xc, yc):
    img = render_scene(SceneSpec(CrSpec((xc, yc), r / 5, amp), size=(60, 60))).image
    y, x = np.mgrid[0:60, 0:60]
    d = np.hypot(x - xc, y - yc).ravel()
    order = np.argsort(d, kind="stable")
    v, d = img.ravel()[order], d[order]
    strictly_farther = np.diff(d) > 1e-9
    assert np.all(np.diff(v)[strictly_farther] <= 0)


def test_gaussian_field_separable_matches_direct():
    cr = CrSpec((12.3, 7.9), 3.0, 200.0)
    f = gaussian_field(cr, 25, 17)
    y, x = np.mgrid[0:17, 0:25]
    direct = 200.0 * np.exp(-((x - 12.3) ** 2 + (y - 7.9) ** 2) / (2 * cr.sigma ** 2))
    assert np.allclose(f, direct, rtol=1e-13, atol=0)


def test_scene_rejects_outside_center():
    with pytest.raises(ValueError):
        SceneSpec(CrSpec((70.0, 5.0), 2.0, 10.0), size=(64, 64))


def test_background_invariants():
    with pytest.raises(ValueError):
        BackgroundSpec(True, dark_intensity=0.0)
    with pytest.raises(ValueError):
        BackgroundSpec(True, dark_intensity=150.0, light_intensity=100.0)
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)


# --- stage sampling ------------------------------------------------------------

@given(st.integers(0, 2**63 - 1))
def test_stage1_ranges_full_scale(seed):
    s = sample_stage1(StageDistributions.paper(), seed)
    r = s.cr.radius
    assert 1 <= r <= 30
    assert r <= s.cr.center[0] <= 180 - r and r <= s.cr.center[1] <= 180 - r
    assert 2 <= s.cr.amplitude <= 20000
    assert s.background.dark_intensity >= 1
    assert s.background.dark_intensity <= min(s.background.light_intensity, 255)
    assert 32 <= s.background.light_intensity <= 153
    assert 0 <= s.noise.sigma_n <= 30
    assert 0 <= s.background.line_angle <= 2 * math.pi
    assert s.size == (180, 180)


@given(st.integers(0, 2**63 - 1))
def test_stage2_central_box(seed):
    s = sample_stage2(StageDistributions.paper().stage2(), seed)
    assert abs(s.cr.center[0] - 89.5) <= 0.75 and abs(s.cr.center[1] - 89.5) <= 0.75
    assert 1 <= s.cr.radius <= 30
    d = sample_stage2(StageDistributions.desk().stage2(), seed)
    assert abs(d.cr.center[0] - 31.5) <= 0.75 and abs(d.cr.center[1] - 31.5) <= 0.75


def test_stage_sampling_bulk_ranges_and_amplitude_mean():
    dist = StageDistributions.paper()
    draws = [sample_stage1(dist, s) for s in range(10000)]
    amps = np.array([d.cr.amplitude for d in draws])
    assert abs(amps.mean() - 10001) < 0.05 * 10001
    r = np.array([d.cr.radius for d in draws])
    xs = np.array([d.cr.center[0] for d in draws])
    assert r.min() >= 1 and r.max() <= 30
    assert np.all((xs >= r) & (xs <= 180 - r))
    dark = np.array([d.background.dark_intensity for d in draws])
    assert dark.min() >= 1
    # offset exponential, scale 10 (redraws above the light level are rare)
    assert abs((dark - 1).mean() - 10) < 0.5
    lp = np.array([d.background.line_point for d in draws])
    c = np.array([d.cr.center for d in draws])
    z = (lp - c) / (1.5 * r[:, None])
    assert abs(z.std() - 1) < 0.03


def test_stage_sampling_deterministic():
    d = StageDistributions.desk().stage2()
    assert sample_stage2(d, 99) == sample_stage2(d, 99)
    assert sample_stage2(d, 99) != sample_stage2(d, 100)


# --- evaluation grid -------------------------------------------------------------

def test_grid_count():
    assert len(build_eval_grid()) == 9 * 5 * 10 * 8 * 10 == 36000


def test_grid_stride_and_order():
    g = build_eval_grid(2)
    assert len(g) == 5 * 3 * 5 * 4 * 5
    assert g[0] == GridPoint(2.0, 10.0, 0.0, None, 38.0)
    assert g[1].light == 64.0
    assert [p.r for p in g[:: 3 * 5 * 4 * 5]] == [2.0, 6.0, 10.0, 14.0, 18.0]
    assert len(build_eval_grid((1, 5, 10, 8, 10))) == 9
    with pytest.raises(ValueError):
        build_eval_grid((1, 1, 0, 1, 1))


def test_grid_edges():
    assert EVAL_EDGES[0] is None
    c = (89.5, 89.5)
    s0 = eval_scene(GridPoint(6.0, 100.0, 0.0, 0.0, 128.0), c, (180, 180))
    assert s0.background.line_point[0] == pytest.approx(89.5)
    s1 = eval_scene(GridPoint(6.0, 100.0, 0.0, -1.0, 128.0), c, (180, 180))
    assert s1.background.line_point[0] == pytest.approx(83.5)
    none = eval_scene(GridPoint(6.0, 100.0, 0.0, None, 128.0), c, (180, 180))
    assert not none.background.present


def test_grid_seed_keys_distinct():
    keys = {p.seed_keys() for p in build_eval_grid()}
    assert len(keys) == 36000


# --- eye frames ---------------------------------------------------------------------

def _eye(cr_center, pupil=(80.0, 60.0), noise=NoiseSpec()):
    return synth_eye_frame(EyeFrameSpec((160, 120), pupil, 25.0,
                                        CrSpec(cr_center, 3.0, 500.0), noise=noise))


def test_eye_cr_inside_pupil_uniform_background():
    s = _eye((84.0, 58.0))
    img = s.image
    assert s.truth == (84.0, 58.0) and s.pupil == (80.0, 60.0)
    ring = img[58, 90:96]
    assert np.all(ring == 20 / 255)


def test_eye_cr_on_pupil_edge_two_levels():
    s = _eye((105.0, 60.0))
    row = s.image[60] * 255
    assert row[97] == pytest.approx(20) and row[113] == pytest.approx(100)


def test_eye_pupil_darker_than_iris():
    img = _eye((84.0, 58.0)).image
    y, x = np.mgrid[0:120, 0:160]
    d = np.hypot(x - 80, y - 60)
    pupil = img[(d < 20) & (np.hypot(x - 84, y - 58) > 10)]
    iris = img[(d > 30) & (d < 85)]
    assert pupil.max() < iris.min()


def test_eye_rejects_outside():
    with pytest.raises(ValueError):
        _eye((170.0, 58.0))
    with pytest.raises(ValueError):
        _eye((84.0, 58.0), pupil=(-5.0, 60.0))


def test_manifest_round_trip():
    s = sample_stage1(StageDistributions.desk(), 5)
    row = {k: str(v) for k, v in scene_record(s).items()}
    assert scene_from_record(row, s.size) == s

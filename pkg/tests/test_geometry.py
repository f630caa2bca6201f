import numpy as np
import pytest
from hypothesis import given, strategies as st

from epimatch.errors import DegenerateBaseline, DegenerateLine, InvalidBBox, NonPositiveDepth
from epimatch.geometry import (CameraIntrinsics, CameraView, FundamentalMatrix, Pose,
                               _unchecked_intrinsics, canonical_fundamental, epipolar_offset_vector,
                               epipolar_penalty_matrix, fundamental_from_views, normalized_epipolar_distance,
                               parse_sigma, project_point, project_points, rotation_from_ypr)
from epimatch.scenegen import Detection

UNIT_K = _unchecked_intrinsics(1.0, 1.0, 0.0, 0.0)
CAM_K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def random_view_pair(rng):
    r1 = rotation_from_ypr(*rng.uniform(-30, 30, 3))
    r2 = rotation_from_ypr(*rng.uniform(-30, 30, 3))
    c1 = rng.uniform(-1, 1, 3)
    c2 = c1 + rng.uniform(-2, 2, 3)
    return CameraView(CAM_K, Pose(r1, c1)), CameraView(CAM_K, Pose(r2, c2))


def points_in_front(views, rng, count=100):
    pts = []
    while len(pts) < count:
        x = rng.uniform(-5, 5, 3) + np.array([0, 0, 15])
        if all(v.pose.world_to_camera(x[None])[0, 2] > 1.0 for v in views):
            pts.append(x)
    return np.array(pts)


def homog(p):
    return np.column_stack([p, np.ones(len(p))])


# --- projection -------------------------------------------------------------

@pytest.mark.parametrize("point, expected", [((0, 0, 1), (0, 0)), ((2, 0, 2), (1, 0))])
def test_project_point_unit_camera(point, expected):
    np.testing.assert_allclose(project_point(CameraView(UNIT_K), point), expected)


def test_project_point_pinhole_arithmetic():
    np.testing.assert_allclose(project_point(CameraView(CAM_K), (1, 1, 5)), (420, 340))


@pytest.mark.parametrize("z", [0.0, -1.0, 1e-12])
def test_project_point_rejects_nonpositive_depth(z):
    with pytest.raises(NonPositiveDepth):
        project_point(CameraView(CAM_K), (0.0, 0.0, z))


def test_project_points_matches_single_point_calls(rng):
    view = CameraView(CAM_K, Pose(rotation_from_ypr(10, 3, -2), np.array([0.5, 0.1, -0.3])))
    pts = rng.uniform(-2, 2, (20, 3)) + [0, 0, 10]
    batch = project_points(view, pts)
    for p, b in zip(pts, batch):
        np.testing.assert_allclose(project_point(view, p), b)


def test_pose_rejects_non_rotation():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Pose(2 * np.eye(3))


def test_intrinsics_invariants():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 1.0, 1.0, 2, 2)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1.0, 5.0, 1.0, 4, 4)


# --- fundamental matrix -----------------------------------------------------

def test_fundamental_pure_horizontal_translation():
    v1 = CameraView(UNIT_K)
    v2 = CameraView(UNIT_K, Pose(np.eye(3), np.array([1.0, 0.0, 0.0])))
    f = fundamental_from_views(v1, v2).f
    expected = np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]]) / np.sqrt(2)
    sign = np.sign(np.sum(f * expected))
    np.testing.assert_allclose(sign * f, expected, atol=1e-12)
    # constraint reduces to y1 == y2
    p1 = np.array([3.0, 2.0, 1.0])
    assert p1 @ f @ np.array([-7.0, 2.0, 1.0]) == pytest.approx(0.0, abs=1e-12)
    assert abs(p1 @ f @ np.array([3.0, 2.5, 1.0])) > 0.1


def test_fundamental_constraint_on_random_pose_pairs(rng):
    worst = 0.0
    for _ in range(100):
        v1, v2 = random_view_pair(rng)
        F = fundamental_from_views(v1, v2).f
        assert np.linalg.norm(F) == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.svd(F, compute_uv=False)[2] <= 1e-9
        pts = points_in_front((v1, v2), rng, 100)
        p1 = homog(project_points(v1, pts))
        p2 = homog(project_points(v2, pts))
        worst = max(worst, np.max(np.abs(np.einsum("ni,ij,nj->n", p1, F, p2))))
    assert worst <= 1e-6


def test_forward_motion_epipole_is_principal_point():
    v1 = CameraView(CAM_K)
    v2 = CameraView(CAM_K, Pose(np.eye(3), np.array([0.0, 0.0, -1.0])))
    F = fundamental_from_views(v1, v2).f
    u, _, _ = np.linalg.svd(F)
    e1 = u[:, 2] / u[2, 2]  # left null vector: every epipolar line in image 1 passes through it
    np.testing.assert_allclose(e1[:2], (CAM_K.cx, CAM_K.cy), atol=1e-6)


def test_fundamental_degenerate_baseline():
    v = CameraView(CAM_K, Pose(rotation_from_ypr(20), np.zeros(3)))
    with pytest.raises(DegenerateBaseline):
        fundamental_from_views(CameraView(CAM_K), v)


def test_canonical_fundamental_is_scale_and_sign_invariant(rng):
    f = rng.standard_normal((3, 3))
    np.testing.assert_allclose(canonical_fundamental(f), canonical_fundamental(-3.5 * f), atol=1e-12)


# --- epipolar offset and distance ---------------------------------------------

F_HORIZ = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def test_offset_vector_hand_example():
    v = epipolar_offset_vector(F_HORIZ, (7.0, 8.0), (5.0, 3.0))
    np.testing.assert_allclose(v, (0.0, -5.0))
    assert np.linalg.norm(v) == pytest.approx(5.0)


def test_offset_vector_on_line_is_zero():
    np.testing.assert_allclose(epipolar_offset_vector(F_HORIZ, (100.0, 3.0), (5.0, 3.0)), (0.0, 0.0))


def test_offset_vector_scales_with_distance():
    near = epipolar_offset_vector(F_HORIZ, (7.0, 5.0), (5.0, 3.0))
    far = epipolar_offset_vector(F_HORIZ, (7.0, 7.0), (5.0, 3.0))
    np.testing.assert_allclose(far, 2 * near)


def test_offset_vector_lands_on_line(rng):
    F = rng.standard_normal((3, 3))
    pi, pj = rng.uniform(0, 100, 2), rng.uniform(0, 100, 2)
    v = epipolar_offset_vector(F, pi, pj)
    foot = np.append(pi + v, 1.0)
    assert foot @ F @ np.append(pj, 1.0) == pytest.approx(0.0, abs=1e-9)


def test_offset_vector_degenerate_line():
    with pytest.raises(DegenerateLine):
        epipolar_offset_vector(np.zeros((3, 3)), (1.0, 1.0), (2.0, 2.0))


@pytest.mark.parametrize("v, w, h, expected", [
    ((0, 0), 4, 5, 0.0),
    ((0, 5), 4, 5, 1.0),
    ((3, 4), 3, 2, np.sqrt(5.0)),
])
def test_normalized_distance_examples(v, w, h, expected):
    assert normalized_epipolar_distance(v, w, h) == pytest.approx(expected)


@pytest.mark.parametrize("w, h", [(0, 1), (1, 0), (-2, 3)])
def test_normalized_distance_invalid_box(w, h):
    with pytest.raises(InvalidBBox):
        normalized_epipolar_distance((1, 1), w, h)


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0.5, 50), st.floats(0.5, 50))
def test_doubling_box_halves_distance(vx, vy, w, h):
    d = normalized_epipolar_distance((vx, vy), w, h)
    assert normalized_epipolar_distance((vx, vy), 2 * w, 2 * h) == pytest.approx(d / 2, abs=1e-12)


# --- penalty matrix ---------------------------------------------------------------

def boxes(rng, k):
    return [Detection(i, np.r_[rng.uniform(50, 600), rng.uniform(50, 400), rng.uniform(10, 80, 2)],
                      np.zeros(4)) for i in range(k)]


def test_penalty_closed_form_values():
    # node 0 of view 2 lies on y = 3; view-1 nodes sit 0 and 4 px off that line, box height 2
    n1 = [Detection(0, np.array([7.0, 3.0, 2.0, 2.0]), np.zeros(1)),
          Detection(1, np.array([7.0, 7.0, 2.0, 2.0]), np.zeros(1))]
    n2 = [Detection(0, np.array([5.0, 3.0, 2.0, 2.0]), np.zeros(1))]
    pen = epipolar_penalty_matrix(F_HORIZ, n1, n2, 2.0)
    np.testing.assert_allclose(pen.d[:, 0], [0.0, 2.0], atol=1e-12)
    assert pen.w[0, 0] == 1.0
    assert pen.w[1, 0] == pytest.approx(np.exp(-0.5))
    assert pen.w[1, 0] == pytest.approx(0.6065, abs=1e-4)


def test_penalty_range_and_scale_invariance(rng):
    v1, v2 = random_view_pair(rng)
    F = fundamental_from_views(v1, v2).f
    n1, n2 = boxes(rng, 7), boxes(rng, 5)
    pen = epipolar_penalty_matrix(F, n1, n2)
    assert pen.d.shape == (7, 5)
    assert np.all(pen.d >= 0)
    assert np.all((pen.w > 0) & (pen.w <= 1))
    np.testing.assert_allclose(pen.w, np.exp(-pen.d ** 2 / 8.0))
    np.testing.assert_allclose(epipolar_penalty_matrix(-42.0 * F, n1, n2).w, pen.w, atol=1e-12)


def test_penalty_adaptive_sigma_uses_std(rng):
    v1, v2 = random_view_pair(rng)
    F = fundamental_from_views(v1, v2)
    pen = epipolar_penalty_matrix(F, boxes(rng, 6), boxes(rng, 6), "adaptive")
    assert pen.sigma == pytest.approx(np.std(pen.d))


def test_penalty_degenerate_entries_get_max_finite_distance():
    v1 = CameraView(CAM_K)
    v2 = CameraView(CAM_K, Pose(np.eye(3), np.array([0.0, 0.0, -1.0])))
    F = fundamental_from_views(v1, v2)
    n1 = [Detection(0, np.array([100.0, 100.0, 20.0, 20.0]), np.zeros(1)),
          Detection(1, np.array([500.0, 50.0, 20.0, 20.0]), np.zeros(1))]
    n2 = [Detection(0, np.array([320.0, 240.0, 20.0, 20.0]), np.zeros(1)),   # at the epipole
          Detection(1, np.array([400.0, 300.0, 20.0, 20.0]), np.zeros(1))]
    pen = epipolar_penalty_matrix(F, n1, n2)
    assert pen.degenerate == 2
    np.testing.assert_allclose(pen.d[:, 0], pen.d[:, 1].max())


def test_penalty_normalize_modes_differ_only_in_scale():
    n1 = [Detection(0, np.array([7.0, 7.0, 2.0, 8.0]), np.zeros(1))]
    n2 = [Detection(0, np.array([5.0, 3.0, 2.0, 2.0]), np.zeros(1))]
    d = {mode: epipolar_penalty_matrix(F_HORIZ, n1, n2, 2.0, mode).d[0, 0]
         for mode in ("second", "first", "geometric_mean")}
    assert d["second"] == pytest.approx(2.0)
    assert d["first"] == pytest.approx(0.5)
    assert d["geometric_mean"] == pytest.approx(1.0)


def test_penalty_needs_nodes():
    with pytest.raises(ValueError):
        epipolar_penalty_matrix(F_HORIZ, [], boxes(np.random.default_rng(0), 2))


@pytest.mark.parametrize("text, expected", [("fixed:2.0", 2.0), ("adaptive", "adaptive"), ("1.5", 1.5),
                                            (3, 3.0), (" Fixed:0.5 ", 0.5)])
def test_parse_sigma(text, expected):
    assert parse_sigma(text) == expected


def test_parse_sigma_rejects_garbage():
    with pytest.raises(ValueError):
        parse_sigma("wide")


def test_fundamental_matrix_wrapper_reshapes():
    assert FundamentalMatrix(np.arange(9.0)).f.shape == (3, 3)

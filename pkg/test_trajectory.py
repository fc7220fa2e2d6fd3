import numpy as np
import pytest

from trajectory import (
    KeyPointSet,
    Trajectory,
    TrajectoryError,
    arc_length,
    compute_normals,
    dump_trajectory,
    load_trajectory,
    normals_vjp,
    offset_points,
    point_at_distance,
    spline_interpolate,
)


def straight(n_keypoints=3, samples=4):
    kp = [[float(i + 1), 0.0, 0.0] for i in range(n_keypoints)]
    return compute_normals(spline_interpolate(kp, samples))


def test_path_passes_through_every_control_point():
    kp = np.array([[1.0, 0.0, 0.2], [2.0, 1.0, 0.4], [3.0, 1.5, 0.1]])
    traj = spline_interpolate(kp, samples_per_segment=5)
    assert traj.n == 16
    np.testing.assert_allclose(traj.waypoints[0], [0.0, 0.0, 0.0])
    for i, point in enumerate(kp):
        np.testing.assert_allclose(traj.waypoints[5 * (i + 1)], point, atol=1e-12)


def test_evenly_spaced_collinear_controls_give_a_uniform_line():
    traj = spline_interpolate([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]], samples_per_segment=4)
    np.testing.assert_allclose(traj.waypoints[:, 0], np.linspace(0.0, 3.0, 13), atol=1e-12)
    np.testing.assert_allclose(traj.waypoints[:, 1:], 0.0, atol=1e-12)


def test_basis_rows_are_affine_combinations(rng):
    kp = rng.uniform(-2, 2, size=(5, 3))
    traj = spline_interpolate(kp, samples_per_segment=7)
    np.testing.assert_allclose(traj.basis.sum(axis=1), 1.0, atol=1e-12)

    shift = np.array([0.7, -1.3, 0.25])
    moved = spline_interpolate(kp + shift, samples_per_segment=7, origin=shift)
    np.testing.assert_allclose(moved.waypoints, traj.waypoints + shift, atol=1e-12)


def test_duplicate_keypoints_are_dropped():
    traj = spline_interpolate([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]], samples_per_segment=6)
    assert traj.n == 7
    assert np.all(traj.seg_lengths > 0)
    assert np.all(traj.basis[:, [1, 3]] == 0)


def test_all_keypoints_at_origin_collapse_to_a_point():
    traj = compute_normals(spline_interpolate(np.zeros((3, 3)), samples_per_segment=4))
    np.testing.assert_allclose(traj.waypoints, 0.0)
    np.testing.assert_allclose(traj.normals, np.tile([0.0, 1.0], (traj.n, 1)))


@pytest.mark.parametrize(
    "points",
    [np.zeros((0, 3)), np.zeros((3, 2)), np.array([[1.0, np.nan, 0.0]])],
)
def test_malformed_keypoints_are_rejected(points):
    with pytest.raises(TrajectoryError):
        KeyPointSet(points)


def test_samples_per_segment_must_be_positive():
    with pytest.raises(ValueError):
        spline_interpolate([[1.0, 0.0, 0.0]], samples_per_segment=0)


def test_normals_are_left_perpendicular_unit_vectors():
    traj = straight()
    np.testing.assert_allclose(traj.normals, np.tile([0.0, 1.0], (traj.n, 1)), atol=1e-12)

    theta = np.linspace(0.0, np.pi, 25)
    arc = Trajectory(waypoints=np.column_stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)]))
    normals = compute_normals(arc).normals
    np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0)
    # counter-clockwise arc: left normals point at the center
    assert np.all(np.sum(normals * arc.waypoints[:, :2], axis=1) < 0)


def test_normals_need_two_waypoints():
    with pytest.raises(TrajectoryError):
        compute_normals(Trajectory(waypoints=np.zeros((1, 3))))


def test_normals_vjp_matches_finite_differences(rng):
    t = np.linspace(0.0, 2.0, 12)
    waypoints = np.column_stack([t, 0.3 * np.sin(2 * t), 0.1 * t])
    upstream = rng.normal(size=(len(t), 2))

    def objective(wp):
        return float(np.sum(upstream * compute_normals(Trajectory(waypoints=wp)).normals))

    analytic = normals_vjp(compute_normals(Trajectory(waypoints=waypoints)), upstream)
    numeric = np.zeros_like(waypoints)
    h = 1e-6
    for i in range(len(t)):
        for j in range(3):
            step = np.zeros_like(waypoints)
            step[i, j] = h
            numeric[i, j] = (objective(waypoints + step) - objective(waypoints - step)) / (2 * h)
    np.testing.assert_allclose(analytic, numeric, atol=1e-6)


def test_offset_points_shift_by_half_width():
    traj = straight()
    left, right = offset_points(traj, 0.5)
    np.testing.assert_allclose(left[:, 1], 0.5, atol=1e-12)
    np.testing.assert_allclose(right[:, 1], -0.5, atol=1e-12)
    np.testing.assert_allclose(left[:, [0, 2]], traj.waypoints[:, [0, 2]])


def test_offset_points_require_normals():
    with pytest.raises(TrajectoryError):
        offset_points(spline_interpolate([[1.0, 0.0, 0.0]]), 0.5)


def test_walking_a_straight_path():
    traj = straight()
    assert arc_length(traj) == pytest.approx(3.0)

    point, heading, done = point_at_distance(traj, 1.2)
    np.testing.assert_allclose(point, [1.2, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(heading, [1.0, 0.0])
    assert not done

    point, _, done = point_at_distance(traj, 10.0)
    np.testing.assert_allclose(point, [3.0, 0.0, 0.0], atol=1e-12)
    assert done


def test_dump_round_trip(tmp_path):
    kp = np.array([[1.0, 0.5, 0.3], [2.5, -0.5, 0.2]])
    traj = compute_normals(spline_interpolate(kp, samples_per_segment=3))
    path = tmp_path / "path.txt"
    dump_trajectory(traj, path)

    loaded = load_trajectory(path)
    np.testing.assert_array_equal(loaded.waypoints, traj.waypoints)
    np.testing.assert_array_equal(loaded.normals, traj.normals)
    assert loaded.basis is None


def test_loading_rejects_wrong_columns(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 0 0 1\n1 0 0 1\n")
    with pytest.raises(TrajectoryError, match="expected 5 columns"):
        load_trajectory(path)

    path.write_text("x y z nx ny\n")
    with pytest.raises(TrajectoryError, match="malformed"):
        load_trajectory(path)

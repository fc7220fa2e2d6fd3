import math

import numpy as np
import pytest

from costmap import CostMap, HeightMap
from envworld import RobotPose
from losses import (
    LossBreakdown,
    LossWeights,
    collision_label,
    collision_loss,
    goal_loss,
    height_loss,
    motion_loss,
    total_loss,
    traversability_loss,
    world_trajectory,
)
from trajectory import Trajectory, compute_normals, spline_interpolate

RES = 0.1


def linear_field(a, bx, by, size=10.0, kind=CostMap):
    """a + bx * x + by * y sampled at cell centers; bilinear lookups reproduce it exactly."""
    n = int(round(size / RES))
    centers = (np.arange(n) + 0.5) * RES
    xs, ys = np.meshgrid(centers, centers)
    return kind(a + bx * xs + by * ys, RES)


def straight_path(z=0.0):
    return compute_normals(spline_interpolate([[2.0, 5.0, z], [3.0, 5.0, z]], 5, origin=(1.0, 5.0, z)))


def test_goal_loss_values():
    traj = straight_path()
    value, grad = goal_loss(traj, [3.0, 5.0, 0.0])
    assert value == 0.0
    assert np.all(grad == 0)

    d = math.e - 1.0
    value, grad = goal_loss(traj, [3.0 + d, 5.0, 0.0])
    assert value == pytest.approx(1.0)
    # pulling the endpoint toward the goal lowers the loss
    assert grad[0] < 0 and grad[1] == 0


def test_traversability_on_a_constant_field_is_the_constant():
    value, grad = traversability_loss(straight_path(), linear_field(0.8, 0.0, 0.0), w_r=0.5)
    assert value == pytest.approx(0.8)
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)


def test_motion_loss_is_zero_for_uniform_spacing():
    value, grad = motion_loss(straight_path())
    assert value == pytest.approx(0.0, abs=1e-20)
    np.testing.assert_allclose(grad, 0.0, atol=1e-10)


def test_motion_loss_gradient_matches_finite_differences(rng):
    waypoints = np.cumsum(rng.uniform(0.1, 0.5, size=(9, 3)), axis=0)
    value, grad = motion_loss(Trajectory(waypoints=waypoints))
    assert value > 0
    h = 1e-6
    for i in range(len(waypoints)):
        for j in range(3):
            step = np.zeros_like(waypoints)
            step[i, j] = h
            up, _ = motion_loss(Trajectory(waypoints=waypoints + step))
            down, _ = motion_loss(Trajectory(waypoints=waypoints - step))
            assert grad[i, j] == pytest.approx((up - down) / (2 * h), abs=1e-6)


def test_height_loss_is_zero_when_riding_a_ramp():
    ramp = linear_field(0.0, 0.3, 0.0, kind=HeightMap)
    xs = np.linspace(1.0, 8.0, 15)
    waypoints = np.column_stack([xs, np.full_like(xs, 4.0), 0.3 * xs + 0.5])
    value, _ = height_loss(Trajectory(waypoints=waypoints), ramp, h_r=0.5)
    assert value == pytest.approx(0.0, abs=1e-12)


def test_height_loss_is_the_mean_offset():
    flat = linear_field(0.0, 0.0, 0.0, kind=HeightMap)
    value, grad = height_loss(straight_path(z=0.9), flat, h_r=0.5)
    assert value == pytest.approx(0.4)
    assert np.all(grad[:, 2] > 0)


@pytest.mark.parametrize("collided_cost", [0.5, 2.0])
def test_bce_at_half_probability_is_ln2(collided_cost):
    field = linear_field(collided_cost, 0.0, 0.0)
    value, g_logit, collided = collision_loss(straight_path(), field, 0.5)
    assert value == pytest.approx(math.log(2.0))
    assert collided == (collided_cost >= 1.75)
    assert g_logit == pytest.approx(0.5 - float(collided))


def test_collision_label_uses_any_waypoint():
    # cost crosses 1.75 at x = 2.5
    field = linear_field(0.0, 0.7, 0.0)
    assert collision_label(straight_path(), field)
    short = compute_normals(spline_interpolate([[2.0, 5.0, 0.0]], 5, origin=(1.0, 5.0, 0.0)))
    assert not collision_label(short, field)


def test_probability_is_clamped():
    field = linear_field(2.0, 0.0, 0.0)
    value, _, collided = collision_loss(straight_path(), field, 0.0)
    assert collided
    assert value == pytest.approx(-math.log(1e-7))


def test_loss_weights_must_be_non_negative():
    with pytest.raises(ValueError):
        LossWeights(alpha=-1.0)
    with pytest.raises(ValueError):
        LossWeights(delta=float("nan"))


class TestTotalLoss:
    cost = linear_field(0.2, 0.05, 0.08)
    height = linear_field(0.1, 0.02, -0.01, kind=HeightMap)
    origin = (5.0, 5.0, 1.5)
    goal = np.array([8.0, 6.5, 0.5])

    def _loss(self, kp, **kw):
        return total_loss(kp, 0.3, self.cost, self.height, self.goal, origin=self.origin, **kw)

    def _keypoints(self, rng):
        return np.array(self.origin) + rng.uniform(-2.0, 2.0, size=(5, 3)) * [1.0, 1.0, 0.2]

    def test_total_is_the_weighted_sum(self, rng):
        weights = LossWeights(alpha=1.5, beta=0.5, gamma=2.0, delta=0.25)
        b = total_loss(self._keypoints(rng), 0.3, self.cost, self.height, self.goal, weights, origin=self.origin)
        expected = 1.5 * b.traversability + 0.5 * b.goal + 2.0 * b.motion + 0.25 * b.height + b.collision
        assert b.total == pytest.approx(expected, rel=1e-12)
        assert not b.collided
        assert b.grad_keypoints.shape == (5, 3)

    @pytest.mark.parametrize("through_normals", [False, True])
    def test_keypoint_gradient_matches_finite_differences(self, rng, through_normals):
        kp = self._keypoints(rng)
        analytic = self._loss(kp, through_normals=through_normals).grad_keypoints
        h = 1e-6
        for i in range(kp.shape[0]):
            for j in range(3):
                step = np.zeros_like(kp)
                step[i, j] = h
                numeric = (self._loss(kp + step).total - self._loss(kp - step).total) / (2 * h)
                assert analytic[i, j] == pytest.approx(numeric, rel=1e-4, abs=1e-6)

    def test_pose_maps_robot_frame_onto_the_maps(self, rng):
        flat = linear_field(0.0, 0.0, 0.0, kind=HeightMap)
        pose = RobotPose(4.0, 5.0, 0.6)
        c, s = math.cos(pose.yaw), math.sin(pose.yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        shift = np.array([pose.x, pose.y, 0.0])

        local_kp = rng.uniform(0.2, 2.0, size=(4, 3)) * [1.0, 1.0, 0.3]
        local_goal = np.array([3.0, 0.5, 0.5])
        robot = total_loss(local_kp, 0.3, self.cost, flat, local_goal, pose=pose)
        world = total_loss(
            local_kp @ rot.T + shift,
            0.3,
            self.cost,
            flat,
            rot @ local_goal + shift,
            origin=(pose.x, pose.y, 0.5),
        )
        assert robot.total == pytest.approx(world.total, rel=1e-12)
        np.testing.assert_allclose(robot.grad_keypoints, world.grad_keypoints @ rot, atol=1e-12)

        traj = world_trajectory(local_kp, pose, flat)
        np.testing.assert_allclose(traj.waypoints, robot.trajectory.waypoints, atol=1e-12)


def test_breakdown_mean_and_row():
    a = LossBreakdown(1.0, 2.0, 3.0, 4.0, 5.0, 15.0)
    b = LossBreakdown(3.0, 2.0, 1.0, 0.0, 1.0, 7.0, collided=True)
    mean = LossBreakdown.mean([a, b])
    assert mean.traversability == 2.0 and mean.total == 11.0
    assert mean.collided
    assert list(mean.as_row()) == ["total", "T_trav", "T_goal", "T_motion", "T_height", "C"]
    assert str(mean).startswith("total=11.0000 T_trav=2.0000")
    with pytest.raises(ValueError):
        LossBreakdown.mean([])

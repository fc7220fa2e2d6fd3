"""
Task-level path cost: traversability, goal, motion and height terms plus the
collision-probability BCE, each with analytic gradients.
"""

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from costmap import height_at, interpolate_many
from format_utils import format_loss_line
from trajectory import compute_normals, normals_vjp, offset_points, spline_interpolate

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7
DEFAULT_OBSTACLE_THRESHOLD = 1.75
COMPONENTS = ("traversability", "goal", "motion", "height", "collision")


def _debug_checks():
    return os.environ.get("IMPPLAN_DEBUG", "").lower() not in ("", "0", "false")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 5.0
    beta: float = 2.0
    gamma: float = 1.0
    delta: float = 2.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {value}")


@dataclass
class LossBreakdown:
    traversability: float
    goal: float
    motion: float
    height: float
    collision: float
    total: float
    grad_keypoints: np.ndarray = field(default=None, repr=False)
    grad_mu_logit: float = 0.0
    collided: bool = False
    trajectory: object = field(default=None, repr=False)

    def as_row(self):
        return {
            "total": self.total,
            "T_trav": self.traversability,
            "T_goal": self.goal,
            "T_motion": self.motion,
            "T_height": self.height,
            "C": self.collision,
        }

    def __str__(self):
        return format_loss_line(self.as_row())

    @classmethod
    def mean(cls, items):
        """Component-wise mean of scalar fields; gradients are not carried."""
        items = list(items)
        if not items:
            raise ValueError("cannot average an empty list of loss breakdowns")
        values = {name: float(np.mean([getattr(b, name) for b in items])) for name in COMPONENTS + ("total",)}
        return cls(**values, collided=any(b.collided for b in items))


def traversability_loss(traj, cost_map, w_r, through_normals=False):
    """
    Mean cost over the center and both robot-width offset points

    Args:
        traj (Trajectory): Path with normals
        cost_map (CostMap): Field to integrate
        w_r (float): Half robot width in meters
        through_normals (bool): Also differentiate through the normal rotation

    Returns:
        tuple: (value, (n, 3) gradient w.r.t. waypoints)
    """
    if traj.normals is None:
        traj = compute_normals(traj)
    left, right = offset_points(traj, w_r)
    n = traj.n
    values, grads, out = interpolate_many(cost_map, np.vstack([traj.waypoints, left, right]))
    if out.any():
        logger.debug("%d of %d traversability lookups fell outside the map", int(out.sum()), 3 * n)

    value = float(values.sum() / (3 * n))
    g_center, g_left, g_right = grads[:n], grads[n : 2 * n], grads[2 * n :]
    grad = np.zeros((n, 3))
    grad[:, :2] = (g_center + g_left + g_right) / (3 * n)
    if through_normals and w_r:
        grad += normals_vjp(traj, w_r * (g_left - g_right) / (3 * n))
    return value, grad


def goal_loss(traj, goal):
    """log(d + 1) of the terminal distance d, with its gradient w.r.t. the last waypoint."""
    diff = traj.waypoints[-1] - np.asarray(goal, dtype=np.float64)
    d = float(np.linalg.norm(diff))
    if d == 0.0:
        return 0.0, np.zeros(3)
    return math.log(d + 1.0), diff / (d * (d + 1.0))


def motion_loss(traj):
    """
    Segment-spacing uniformity: var(L) / mean(L)^2 over segment lengths L

    Returns:
        tuple: (value, (n, 3) gradient w.r.t. waypoints)
    """
    if traj.n < 2:
        raise ValueError("motion loss needs at least 2 waypoints")
    steps = np.diff(traj.waypoints, axis=0)
    lengths = np.linalg.norm(steps, axis=1)
    mu = lengths.mean()
    grad = np.zeros((traj.n, 3))
    if mu <= 0:
        return 0.0, grad
    var = lengths.var()
    s2 = float(np.mean(lengths ** 2))
    dl = 2.0 / (len(lengths) * mu ** 2) * (lengths - s2 / mu)
    units = np.divide(steps, lengths[:, None], out=np.zeros_like(steps), where=lengths[:, None] > 0)
    contrib = dl[:, None] * units
    grad[1:] += contrib
    grad[:-1] -= contrib
    return float(var / mu ** 2), grad


def height_loss(traj, height_map, h_r):
    """Mean |z - terrain - h_r| with sign subgradients (0 at exact zeros)."""
    values, grads, _ = interpolate_many(height_map, traj.waypoints)
    residual = traj.waypoints[:, 2] - values - h_r
    n = traj.n
    s = np.sign(residual) / n
    grad = np.zeros((n, 3))
    grad[:, 2] = s
    grad[:, :2] = -s[:, None] * grads
    return float(np.abs(residual).mean()), grad


def collision_label(traj, cost_map, obstacle_threshold=DEFAULT_OBSTACLE_THRESHOLD):
    values, _, _ = interpolate_many(cost_map, traj.waypoints)
    return bool(np.any(values >= obstacle_threshold))


def collision_loss(traj, cost_map, mu, obstacle_threshold=DEFAULT_OBSTACLE_THRESHOLD):
    """
    BCE of the collision probability against the path's collision label

    Args:
        traj (Trajectory): Path to test
        cost_map (CostMap): Field used for the membership test
        mu (float): Predicted collision probability
        obstacle_threshold (float): Cost at or above which a waypoint collides

    Returns:
        tuple: (value, gradient w.r.t. the mu logit, collided flag)
    """
    collided = collision_label(traj, cost_map, obstacle_threshold)
    y = 1.0 if collided else 0.0
    p = min(max(float(mu), BCE_EPS), 1.0 - BCE_EPS)
    value = -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))
    return value, float(mu) - y, collided


def _frame(pose, height_map, h_r, origin):
    """Affine robot-to-map transform (rotation, offset) and the map-frame origin."""
    if pose is None:
        rot = np.eye(3)
        offset = np.zeros(3)
        start = np.array([0.0, 0.0, h_r] if origin is None else origin, dtype=np.float64)
        return rot, offset, start
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    ground, _ = height_at(height_map, (pose.x, pose.y))
    offset = np.array([pose.x, pose.y, ground])
    local = np.array([0.0, 0.0, h_r] if origin is None else origin, dtype=np.float64)
    return rot, offset, rot @ local + offset


def total_loss(
    keypoints,
    mu,
    m_semantic,
    m_height,
    goal,
    weights=None,
    w_r=0.5,
    h_r=0.5,
    *,
    pose=None,
    origin=None,
    samples_per_segment=10,
    obstacle_threshold=DEFAULT_OBSTACLE_THRESHOLD,
    through_normals=False,
):
    """
    Full path cost with gradients back to the keypoints

    With a pose, keypoints, origin and goal are robot-frame quantities (z
    measured from the ground under the robot) and are mapped onto the maps by
    the pose; without one they are already map-frame.

    Args:
        keypoints (array): (n_k, 3) keypoints
        mu (float): Collision probability
        m_semantic (CostMap): Supervising costmap
        m_height (HeightMap): Terrain heights
        goal (array): Goal point, same frame as the keypoints
        weights (LossWeights): alpha, beta, gamma, delta
        w_r (float): Half robot width
        h_r (float): Body height above terrain
        pose (RobotPose): Robot pose on the maps, or None
        origin (array): Path start, defaults to (0, 0, h_r)
        samples_per_segment (int): Spline density
        obstacle_threshold (float): Collision membership threshold
        through_normals (bool): Exact traversability derivative through normals

    Returns:
        LossBreakdown: Components, total and gradients
    """
    weights = LossWeights() if weights is None else weights
    rot, offset, start = _frame(pose, m_height, h_r, origin)
    kp = np.asarray(keypoints, dtype=np.float64)
    world_kp = kp @ rot.T + offset
    world_goal = rot @ np.asarray(goal, dtype=np.float64) + offset

    traj = compute_normals(spline_interpolate(world_kp, samples_per_segment, origin=start))

    t_trav, g_trav = traversability_loss(traj, m_semantic, w_r, through_normals)
    t_goal, g_goal = goal_loss(traj, world_goal)
    t_motion, g_motion = motion_loss(traj)
    t_height, g_height = height_loss(traj, m_height, h_r)
    c_value, g_logit, collided = collision_loss(traj, m_semantic, mu, obstacle_threshold)

    total = weights.alpha * t_trav + weights.beta * t_goal + weights.gamma * t_motion + weights.delta * t_height + c_value

    grad_wp = weights.alpha * g_trav + weights.gamma * g_motion + weights.delta * g_height
    grad_wp[-1] += weights.beta * g_goal
    grad_controls = traj.basis.T @ grad_wp
    grad_kp = grad_controls[1:] @ rot

    breakdown = LossBreakdown(
        traversability=t_trav,
        goal=t_goal,
        motion=t_motion,
        height=t_height,
        collision=c_value,
        total=total,
        grad_keypoints=grad_kp,
        grad_mu_logit=g_logit,
        collided=collided,
        trajectory=traj,
    )
    if _debug_checks():
        check_breakdown(breakdown, weights)
    return breakdown


def check_breakdown(breakdown, weights):
    expected = (
        weights.alpha * breakdown.traversability
        + weights.beta * breakdown.goal
        + weights.gamma * breakdown.motion
        + weights.delta * breakdown.height
        + breakdown.collision
    )
    if abs(expected - breakdown.total) > 1e-12:
        raise AssertionError(f"loss total {breakdown.total!r} disagrees with weighted sum {expected!r}")
    for name in COMPONENTS:
        if getattr(breakdown, name) < 0:
            raise AssertionError(f"loss component {name} is negative: {getattr(breakdown, name)!r}")


def world_trajectory(keypoints, pose, height_map, h_r=0.5, samples_per_segment=10):
    """Map-frame path with normals for robot-frame keypoints predicted at `pose`."""
    rot, offset, start = _frame(pose, height_map, h_r, None)
    world_kp = np.asarray(keypoints, dtype=np.float64) @ rot.T + offset
    return compute_normals(spline_interpolate(world_kp, samples_per_segment, origin=start))

"""
Keypoint to dense-path expansion: uniform Catmull-Rom spline, normals and
robot-width offset points.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

logger = logging.getLogger(__name__)

DUPLICATE_TOL = 1e-12


class TrajectoryError(ValueError):
    """Raised for malformed keypoints and degenerate trajectories."""


@dataclass(frozen=True)
class KeyPointSet:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 1:
            raise TrajectoryError(f"keypoints must have shape (n_k, 3) with n_k >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise TrajectoryError("keypoints must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class Trajectory:
    """
    Dense path

    waypoints: (n, 3) points; normals: (n, 2) unit xy normals or None before
    compute_normals; basis: (n, n_k + 1) matrix with waypoints = basis @
    [origin; keypoints], or None for trajectories loaded from disk.
    """

    waypoints: np.ndarray
    normals: np.ndarray = None
    basis: np.ndarray = None

    @property
    def n(self):
        return len(self.waypoints)

    @property
    def seg_lengths(self):
        return np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)


# Catmull-Rom blending weights for control points P0..P3 at parameter t.
def _blend(t):
    t2, t3 = t * t, t * t * t
    return 0.5 * np.array([-t + 2 * t2 - t3, 2 - 5 * t2 + 3 * t3, t + 4 * t2 - 3 * t3, -t2 + t3])


def spline_basis(n_controls, keep, samples_per_segment):
    """
    Linear map from control points to waypoints

    Args:
        n_controls (int): Number of control points including the origin
        keep (list): Indices of control points retained after duplicate removal
        samples_per_segment (int): Samples per span

    Returns:
        numpy.ndarray: (1 + spans * samples_per_segment, n_controls) basis
    """
    m = len(keep)
    if m == 1:
        basis = np.zeros((1 + samples_per_segment, n_controls))
        basis[:, keep[0]] = 1.0
        return basis

    # rows of `ext` express [phantom, P_0..P_{m-1}, phantom] over the kept controls
    ext = np.zeros((m + 2, m))
    ext[1:-1] = np.eye(m)
    ext[0, 0], ext[0, 1] = 2.0, -1.0
    ext[-1, -1], ext[-1, -2] = 2.0, -1.0

    rows = []
    for span in range(m - 1):
        for j in range(samples_per_segment):
            rows.append(_blend(j / samples_per_segment) @ ext[span : span + 4])
    rows.append(ext[-2])

    compact = np.array(rows)
    basis = np.zeros((len(rows), n_controls))
    basis[:, keep] = compact
    return basis


def spline_interpolate(keypoints, samples_per_segment=10, origin=(0.0, 0.0, 0.0)):
    """
    Expand keypoints into a dense Catmull-Rom path starting at the origin

    Consecutive duplicate control points are dropped so no span has zero
    length. Every waypoint is a fixed linear combination of control points,
    kept on the result as `basis`.

    Args:
        keypoints (KeyPointSet or array): (n_k, 3) keypoints
        samples_per_segment (int): Samples per span, at least 1
        origin (tuple): Path start, (0, 0, z0) in the robot frame

    Returns:
        Trajectory: Waypoints (without normals) and basis
    """
    if samples_per_segment < 1:
        raise TrajectoryError(f"samples_per_segment must be >= 1, got {samples_per_segment}")
    k = keypoints if isinstance(keypoints, KeyPointSet) else KeyPointSet(keypoints)
    controls = np.vstack([np.asarray(origin, dtype=np.float64).reshape(1, 3), k.points])

    keep = [0]
    for i in range(1, len(controls)):
        if np.linalg.norm(controls[i] - controls[keep[-1]]) > DUPLICATE_TOL:
            keep.append(i)
    if len(keep) < len(controls):
        logger.debug("Dropped %d duplicate keypoints", len(controls) - len(keep))

    basis = spline_basis(len(controls), keep, samples_per_segment)
    return Trajectory(waypoints=basis @ controls, basis=basis)


def _tangents(waypoints):
    xy = waypoints[:, :2]
    tang = np.empty_like(xy)
    tang[1:-1] = xy[2:] - xy[:-2]
    tang[0] = xy[1] - xy[0]
    tang[-1] = xy[-1] - xy[-2]
    return tang


def compute_normals(traj):
    """
    Attach unit left-perpendicular normals of the xy tangents

    Central differences inside, one-sided at the ends. Points with a zero
    tangent reuse the previous normal.

    Args:
        traj (Trajectory): Path with at least 2 waypoints

    Returns:
        Trajectory: Copy carrying normals
    """
    if traj.n < 2:
        raise TrajectoryError("normals need at least 2 waypoints")
    tang = _tangents(traj.waypoints)
    norms = np.linalg.norm(tang, axis=1)
    valid = norms > DUPLICATE_TOL

    normals = np.zeros((traj.n, 2))
    normals[valid, 0] = -tang[valid, 1] / norms[valid]
    normals[valid, 1] = tang[valid, 0] / norms[valid]

    fallback = normals[np.argmax(valid)] if valid.any() else np.array([0.0, 1.0])
    last = fallback
    for i in range(traj.n):
        if valid[i]:
            last = normals[i]
        else:
            normals[i] = last
    return replace(traj, normals=normals)


def normals_vjp(traj, grad_normals):
    """
    Pull a gradient w.r.t. the normals back onto the waypoints

    Args:
        traj (Trajectory): Path with normals
        grad_normals (numpy.ndarray): (n, 2) upstream gradient

    Returns:
        numpy.ndarray: (n, 3) gradient w.r.t. waypoints (z column zero)
    """
    tang = _tangents(traj.waypoints)
    norms = np.linalg.norm(tang, axis=1)
    grad_wp = np.zeros((traj.n, 3))
    for i in range(traj.n):
        if norms[i] <= DUPLICATE_TOL:
            continue
        t_hat = tang[i] / norms[i]
        # n = R t_hat with R a +90 degree rotation
        g_t = np.array([grad_normals[i, 1], -grad_normals[i, 0]])
        g_d = (g_t - t_hat * (t_hat @ g_t)) / norms[i]
        hi = min(i + 1, traj.n - 1)
        lo = max(i - 1, 0)
        grad_wp[hi, :2] += g_d
        grad_wp[lo, :2] -= g_d
    return grad_wp


def offset_points(traj, w_r):
    """Left and right robot-width offsets p +/- w_r * n (xy only, z copied)."""
    if traj.normals is None:
        raise TrajectoryError("compute normals before offsetting")
    left = traj.waypoints.copy()
    right = traj.waypoints.copy()
    left[:, :2] += w_r * traj.normals
    right[:, :2] -= w_r * traj.normals
    return left, right


def arc_length(traj):
    return float(traj.seg_lengths.sum())


def point_at_distance(traj, distance):
    """
    Walk the path in the xy plane

    Args:
        traj (Trajectory): Path
        distance (float): Planar distance from the first waypoint

    Returns:
        tuple: (point (3,), unit xy heading (2,), reached_end bool)
    """
    steps = np.diff(traj.waypoints, axis=0)
    planar = np.linalg.norm(steps[:, :2], axis=1)
    travelled = 0.0
    heading = np.array([1.0, 0.0])
    for i, seg in enumerate(planar):
        if seg <= DUPLICATE_TOL:
            continue
        heading = steps[i, :2] / seg
        if travelled + seg >= distance:
            f = (distance - travelled) / seg
            return traj.waypoints[i] + f * steps[i], heading, False
        travelled += seg
    return traj.waypoints[-1].copy(), heading, True


def dump_trajectory(traj, path):
    if traj.normals is None:
        traj = compute_normals(traj)
    rows = np.hstack([traj.waypoints, traj.normals])
    np.savetxt(path, rows, fmt="%.17g", header="x y z nx ny")


def load_trajectory(path):
    try:
        rows = np.loadtxt(path, ndmin=2)
    except ValueError as e:
        raise TrajectoryError(f"{path}: malformed trajectory dump: {e}") from e
    if rows.shape[1] != 5:
        raise TrajectoryError(f"{path}: expected 5 columns 'x y z nx ny', got {rows.shape[1]}")
    return Trajectory(waypoints=rows[:, :3], normals=rows[:, 3:])

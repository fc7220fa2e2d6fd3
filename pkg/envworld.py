"""
Procedural 2D semantic worlds and the raycast sensor analogues of the depth and
semantic cameras.

Grids are stored row-major with shape (rows, cols): row index grows with y,
column index with x, cell (r, c) covers [c*res, (c+1)*res) x [r*res, (r+1)*res).
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from semantics import default_table

logger = logging.getLogger(__name__)

ENV_FORMAT = "impplan-env"
ENV_VERSION = 1
MIN_RANGE = 1e-3


class EnvironmentError2D(ValueError):
    """Raised for invalid environments, poses and sensor settings."""


def normalize_angle(angle):
    """Wrap an angle into (-pi, pi]."""
    if -math.pi < angle <= math.pi:
        return float(angle)
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    return math.pi if wrapped <= -math.pi else wrapped


def grid_shape(width, height, resolution):
    rows = math.ceil(round(height / resolution, 9))
    cols = math.ceil(round(width / resolution, 9))
    return rows, cols


@dataclass(frozen=True)
class Environment2D:
    width: float
    height: float
    resolution: float
    labels: np.ndarray
    heights: np.ndarray
    table: object
    name: str = "custom"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.resolution <= 0:
            raise EnvironmentError2D(
                f"dimensions must be positive, got {self.width} x {self.height} at {self.resolution}"
            )
        shape = grid_shape(self.width, self.height, self.resolution)
        if self.labels.shape != shape or self.heights.shape != shape:
            raise EnvironmentError2D(
                f"grids must have shape {shape}, got labels {self.labels.shape} heights {self.heights.shape}"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.table.classes)):
            raise EnvironmentError2D("label grid references classes outside the cost table")
        if not np.all(np.isfinite(self.heights)):
            raise EnvironmentError2D("terrain heights must be finite")
        self.labels.setflags(write=False)
        self.heights.setflags(write=False)

    @property
    def shape(self):
        return self.labels.shape

    def obstacle_mask(self):
        return self.table.obstacle[self.labels]

    def label_name(self, row, col):
        return self.table.classes[int(self.labels[row, col])].name

    def contains(self, x, y):
        return 0.0 <= x < self.width and 0.0 <= y < self.height

    def world_to_cell(self, x, y):
        return int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution))

    def cell_center(self, row, col):
        return (col + 0.5) * self.resolution, (row + 0.5) * self.resolution

    def class_at(self, x, y):
        """Class index at a world point, or None outside the grid."""
        if not self.contains(x, y):
            return None
        row, col = self.world_to_cell(x, y)
        rows, cols = self.shape
        if row >= rows or col >= cols:
            return None
        return int(self.labels[row, col])


@dataclass(frozen=True)
class RobotPose:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    def to_robot_frame(self, px, py):
        dx, dy = px - self.x, py - self.y
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return c * dx + s * dy, -s * dx + c * dy

    def to_world_frame(self, px, py):
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return self.x + c * px - s * py, self.y + s * px + c * py


@dataclass(frozen=True)
class SensorConfig:
    fov: float = math.pi / 2
    n_rays: int = 64
    max_range: float = 10.0

    def __post_init__(self):
        if self.n_rays < 2:
            raise EnvironmentError2D(f"n_rays must be at least 2, got {self.n_rays}")
        if not 0 < self.fov <= 2 * math.pi:
            raise EnvironmentError2D(f"fov must be in (0, 2pi], got {self.fov}")
        if self.max_range <= 0:
            raise EnvironmentError2D(f"max_range must be positive, got {self.max_range}")


@dataclass(frozen=True)
class DepthScan:
    ranges: np.ndarray
    fov: float
    max_range: float

    @property
    def n_rays(self):
        return len(self.ranges)


@dataclass(frozen=True)
class SemanticScan:
    colors: np.ndarray  # (n_rays, 3) uint8
    fov: float

    @property
    def n_rays(self):
        return len(self.colors)


def ray_bearings(yaw, fov, n_rays):
    return yaw - fov / 2 + np.arange(n_rays) * (fov / (n_rays - 1))


def raycast(env, table, pose, fov=math.pi / 2, n_rays=64, max_range=10.0):
    """
    Render depth and semantic scans by grid traversal

    Every ray is stepped cell by cell (Amanatides-Woo traversal, all rays
    advanced together) until it enters an obstacle-group cell, leaves the
    grid or passes max_range.

    Args:
        env (Environment2D): World to render
        table (CostTable): Taxonomy deciding obstacle classes and colors
        pose (RobotPose): Sensor pose, must lie inside the environment
        fov (float): Field of view in radians
        n_rays (int): Number of rays, at least 2
        max_range (float): Range clamp in meters

    Returns:
        tuple: (DepthScan, SemanticScan)
    """
    SensorConfig(fov=fov, n_rays=n_rays, max_range=max_range)
    if not env.contains(pose.x, pose.y):
        raise EnvironmentError2D(f"pose ({pose.x:.3f}, {pose.y:.3f}) is outside the {env.width} x {env.height} m world")

    res = env.resolution
    rows, cols = env.shape
    obstacle = table.obstacle[env.labels]
    unknown_color = np.array(table.color_of("unknown"), dtype=np.uint8)

    bearings = ray_bearings(pose.yaw, fov, n_rays)
    dx, dy = np.cos(bearings), np.sin(bearings)

    col = np.full(n_rays, min(int(pose.x // res), cols - 1))
    row = np.full(n_rays, min(int(pose.y // res), rows - 1))
    step_c = np.where(dx > 0, 1, -1)
    step_r = np.where(dy > 0, 1, -1)

    with np.errstate(divide="ignore", invalid="ignore"):
        next_x = np.where(dx > 0, (col + 1) * res, col * res)
        next_y = np.where(dy > 0, (row + 1) * res, row * res)
        t_max_c = np.where(dx != 0, (next_x - pose.x) / dx, np.inf)
        t_max_r = np.where(dy != 0, (next_y - pose.y) / dy, np.inf)
        t_delta_c = np.where(dx != 0, res / np.abs(dx), np.inf)
        t_delta_r = np.where(dy != 0, res / np.abs(dy), np.inf)

    t_entry = np.zeros(n_rays)
    ranges = np.full(n_rays, float(max_range))
    hit_label = np.full(n_rays, -1)
    active = np.ones(n_rays, dtype=bool)

    while np.any(active):
        idx = np.flatnonzero(active)
        inside = (row[idx] >= 0) & (row[idx] < rows) & (col[idx] >= 0) & (col[idx] < cols)
        active[idx[~inside]] = False
        idx = idx[inside]

        blocked = obstacle[row[idx], col[idx]]
        hits = idx[blocked]
        ranges[hits] = np.maximum(t_entry[hits], MIN_RANGE)
        hit_label[hits] = env.labels[row[hits], col[hits]]
        active[hits] = False
        idx = idx[~blocked]

        along_c = t_max_c[idx] < t_max_r[idx]
        ic, ir = idx[along_c], idx[~along_c]
        t_entry[ic] = t_max_c[ic]
        col[ic] += step_c[ic]
        t_max_c[ic] += t_delta_c[ic]
        t_entry[ir] = t_max_r[ir]
        row[ir] += step_r[ir]
        t_max_r[ir] += t_delta_r[ir]

        active[idx[t_entry[idx] > max_range]] = False

    colors = np.empty((n_rays, 3), dtype=np.uint8)
    for i in range(n_rays):
        if hit_label[i] >= 0:
            colors[i] = table.colors[hit_label[i]]
            continue
        end_class = env.class_at(pose.x + max_range * dx[i], pose.y + max_range * dy[i])
        colors[i] = unknown_color if end_class is None else table.colors[end_class]

    return DepthScan(ranges, fov, float(max_range)), SemanticScan(colors, fov)


def render(env, table, pose, sensor):
    return raycast(env, table, pose, sensor.fov, sensor.n_rays, sensor.max_range)


def blind_semantic_scan(scan, table):
    """Semantic scan with every ray set to the "unknown" color."""
    colors = np.tile(np.array(table.color_of("unknown"), dtype=np.uint8), (scan.n_rays, 1))
    return SemanticScan(colors, scan.fov)


def perturb_scans(depth, semantic, table, depth_noise_std=0.0, label_flip_prob=0.0, rng=None):
    """
    Corrupt a scan pair with sensor noise

    Args:
        depth (DepthScan): Clean depth scan
        semantic (SemanticScan): Clean semantic scan
        table (CostTable): Taxonomy to draw substitute colors from
        depth_noise_std (float): Std-dev of additive Gaussian range noise in meters
        label_flip_prob (float): Probability of replacing a ray's class color
        rng (numpy.random.Generator): Source of randomness

    Returns:
        tuple: (DepthScan, SemanticScan) noisy copies
    """
    rng = np.random.default_rng() if rng is None else rng
    ranges = depth.ranges
    if depth_noise_std > 0:
        ranges = np.clip(ranges + rng.normal(0.0, depth_noise_std, size=ranges.shape), MIN_RANGE, depth.max_range)
    colors = semantic.colors
    if label_flip_prob > 0:
        flip = rng.random(len(colors)) < label_flip_prob
        colors = colors.copy()
        colors[flip] = table.colors[rng.integers(0, len(table.classes), size=int(flip.sum()))]
    return DepthScan(ranges, depth.fov, depth.max_range), SemanticScan(colors, semantic.fov)


class _Painter:
    """Mutable label/height canvas used by the generators."""

    def __init__(self, width, height, resolution, table, fill):
        self.width, self.height, self.resolution, self.table = width, height, resolution, table
        shape = grid_shape(width, height, resolution)
        self.labels = np.full(shape, table.index_of(fill), dtype=np.int16)
        self.heights = np.zeros(shape, dtype=np.float64)
        ys = (np.arange(shape[0]) + 0.5) * resolution
        xs = (np.arange(shape[1]) + 0.5) * resolution
        self.x, self.y = np.meshgrid(xs, ys)

    def rect(self, x0, y0, x1, y1, name):
        mask = (self.x >= x0) & (self.x < x1) & (self.y >= y0) & (self.y < y1)
        self.labels[mask] = self.table.index_of(name)
        return mask

    def disc(self, cx, cy, radius, name):
        mask = (self.x - cx) ** 2 + (self.y - cy) ** 2 <= radius ** 2
        self.labels[mask] = self.table.index_of(name)
        return mask

    def finish(self, name):
        return Environment2D(
            width=float(self.width),
            height=float(self.height),
            resolution=float(self.resolution),
            labels=self.labels,
            heights=self.heights,
            table=self.table,
            name=name,
        )


def make_corridor(length, width, terrain_pattern="floor", seed=0, resolution=0.1, wall=0.2, table=None):
    """
    Straight corridor along +x with walls on both long sides

    Args:
        length (float): Corridor length in meters
        width (float): Free width between the walls in meters
        terrain_pattern (str): A class name for uniform ground, "patches" for
            seeded rough-terrain patches or "stairs" for a ramped stairs section
        seed (int): Random seed
        resolution (float): Cell size in meters
        wall (float): Wall thickness in meters
        table (CostTable): Taxonomy, default table when None

    Returns:
        Environment2D: The corridor world
    """
    table = default_table() if table is None else table
    if length <= 0 or width <= 0:
        raise EnvironmentError2D(f"corridor dimensions must be positive, got {length} x {width}")
    rng = np.random.default_rng(seed)
    painter = _Painter(length, width + 2 * wall, resolution, table, "floor")
    painter.rect(0, 0, length, wall, "wall")
    painter.rect(0, wall + width, length, width + 2 * wall, "wall")

    if terrain_pattern == "patches":
        for _ in range(max(1, int(length // 3))):
            x0 = rng.uniform(0, length - 1.0)
            name = str(rng.choice(["gravel", "sand", "snow", "terrain"]))
            painter.rect(x0, wall, x0 + rng.uniform(0.5, 2.0), wall + width, name)
    elif terrain_pattern == "stairs":
        x0, x1 = 0.4 * length, 0.6 * length
        mask = painter.rect(x0, wall, x1, wall + width, "stairs")
        rise = 1.0
        painter.heights[mask] = rise * (painter.x[mask] - x0) / (x1 - x0)
        painter.heights[painter.x >= x1] = rise
    else:
        painter.rect(0, wall, length, wall + width, terrain_pattern)

    return painter.finish(f"corridor-{terrain_pattern}-{seed}")


def make_urban_toy(seed=0, resolution=0.2, table=None):
    """
    30 m x 30 m street scene

    A road band with a crosswalk splits the map, sidewalks run along both sides,
    buildings line the street, grass fills the rest and a stairs ramp climbs to a
    raised plaza in the north-east corner.

    Args:
        seed (int): Random seed for building, crosswalk and clutter placement
        resolution (float): Cell size in meters
        table (CostTable): Taxonomy, default table when None

    Returns:
        Environment2D: The urban world
    """
    table = default_table() if table is None else table
    rng = np.random.default_rng(seed)
    size = 30.0
    p = _Painter(size, size, resolution, table, "terrain")

    p.rect(0, 13, size, 17, "road")
    p.rect(0, 11, size, 13, "sidewalk")
    p.rect(0, 17, size, 19, "sidewalk")
    cross_x = float(rng.uniform(6, 20))
    p.rect(cross_x, 13, cross_x + 3, 17, "crosswalk")

    # parked vehicle on the far lane, away from the crosswalk
    car_x = cross_x + 6 if cross_x < 13 else cross_x - 8
    p.rect(car_x, 15.2, car_x + 4, 16.8, "vehicle")

    # south block
    x = float(rng.uniform(0.5, 2.0))
    while x < size - 3:
        w = float(rng.uniform(4, 7))
        depth = float(rng.uniform(4, 7))
        p.rect(x, 10 - depth, min(x + w, size - 0.5), 10, "building")
        x += w + float(rng.uniform(2, 4))

    # north block stops short of the plaza
    x = float(rng.uniform(0.5, 2.0))
    while x < 20:
        w = float(rng.uniform(4, 6))
        depth = float(rng.uniform(4, 7))
        p.rect(x, 20, min(x + w, 21), 20 + depth, "building")
        x += w + float(rng.uniform(2, 4))

    stairs = p.rect(24, 19, 28, 22, "stairs")
    rise = 1.0
    p.heights[stairs] = rise * (p.y[stairs] - 19) / 3.0
    plaza = p.rect(23, 22, 29, 28, "floor")
    p.heights[plaza] = rise

    for _ in range(3):
        p.disc(float(rng.uniform(2, 28)), 11.1, 0.2, "pole")
    for _ in range(4):
        p.disc(float(rng.uniform(2, 28)), float(rng.uniform(1, 9)), 0.6, "tree")
    bench_x = float(rng.uniform(2, 18))
    p.rect(bench_x, 18.4, bench_x + 1.2, 18.9, "bench")

    return p.finish(f"urban-{seed}")


def make_rooms(n_rooms, seed=0, resolution=0.2, table=None):
    """
    Indoor floor plan of rooms connected by doors

    Rooms are laid out on a near-square grid; unused grid slots are left as
    "unknown". Each room holds a few furniture blocks.

    Args:
        n_rooms (int): Number of rooms, at least 1
        seed (int): Random seed
        resolution (float): Cell size in meters
        table (CostTable): Taxonomy, default table when None

    Returns:
        Environment2D: The indoor world
    """
    table = default_table() if table is None else table
    if n_rooms < 1:
        raise EnvironmentError2D(f"n_rooms must be positive, got {n_rooms}")
    rng = np.random.default_rng(seed)
    n_cols = math.ceil(math.sqrt(n_rooms))
    n_rows = math.ceil(n_rooms / n_cols)
    col_w = rng.uniform(5, 8, size=n_cols)
    row_h = rng.uniform(5, 8, size=n_rows)
    xs = np.concatenate([[0.0], np.cumsum(col_w)])
    ys = np.concatenate([[0.0], np.cumsum(row_h)])
    wall, door = 0.2, 1.0

    p = _Painter(float(xs[-1]), float(ys[-1]), resolution, table, "unknown")
    slots = [(r, c) for r in range(n_rows) for c in range(n_cols)][:n_rooms]
    occupied = set(slots)
    for r, c in slots:
        x0, x1, y0, y1 = xs[c], xs[c + 1], ys[r], ys[r + 1]
        p.rect(x0, y0, x1, y1, "wall")
        p.rect(x0 + wall, y0 + wall, x1 - wall, y1 - wall, "floor")
        for _ in range(int(rng.integers(1, 4))):
            fw, fh = rng.uniform(0.6, 1.5, size=2)
            fx = rng.uniform(x0 + 1.0, x1 - 1.0 - fw)
            fy = rng.uniform(y0 + 1.0, y1 - 1.0 - fh)
            p.rect(fx, fy, fx + fw, fy + fh, "furniture")

    for r, c in slots:
        if (r, c + 1) in occupied:
            dy = rng.uniform(ys[r] + 1.0, ys[r + 1] - 1.0 - door)
            p.rect(xs[c + 1] - wall, dy, xs[c + 1] + wall, dy + door, "floor")
        if (r + 1, c) in occupied:
            dx = rng.uniform(xs[c] + 1.0, xs[c + 1] - 1.0 - door)
            p.rect(dx, ys[r + 1] - wall, dx + door, ys[r + 1] + wall, "floor")

    return p.finish(f"rooms-{n_rooms}-{seed}")


GENERATORS = {
    "urban": lambda seed, **kw: make_urban_toy(seed, **kw),
    "corridor": lambda seed, length=10.0, width=2.0, pattern="floor", **kw: make_corridor(length, width, pattern, seed, **kw),
    "rooms": lambda seed, n_rooms=3, **kw: make_rooms(n_rooms, seed, **kw),
}


def env_to_dict(env):
    legend = env.table.names
    return {
        "format": ENV_FORMAT,
        "version": ENV_VERSION,
        "name": env.name,
        "width": env.width,
        "height": env.height,
        "resolution": env.resolution,
        "rows": env.shape[0],
        "cols": env.shape[1],
        "legend": legend,
        "labels": env.labels.astype(int).tolist(),
        "heights": env.heights.tolist(),
    }


def env_from_dict(data, table=None):
    """
    Rebuild an environment from its JSON structure

    Args:
        data (dict): Parsed environment file
        table (CostTable): Taxonomy the legend is resolved against

    Returns:
        Environment2D: The environment
    """
    table = default_table() if table is None else table
    if data.get("format") != ENV_FORMAT:
        raise EnvironmentError2D(f"not an environment file (format={data.get('format')!r})")
    remap = np.array([table.index_of(name) for name in data["legend"]], dtype=np.int16)
    raw = np.asarray(data["labels"], dtype=np.int64)
    if raw.size and (raw.min() < 0 or raw.max() >= len(remap)):
        raise EnvironmentError2D("label indices fall outside the class legend")
    return Environment2D(
        width=float(data["width"]),
        height=float(data["height"]),
        resolution=float(data["resolution"]),
        labels=remap[raw],
        heights=np.asarray(data["heights"], dtype=np.float64),
        table=table,
        name=data.get("name", "custom"),
    )


def env_json(env):
    return json.dumps(env_to_dict(env), sort_keys=True, separators=(",", ":"))


def save_env(env, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(env_json(env))
        fh.write("\n")
    logger.info("Wrote environment %s (%d x %d cells) to %s", env.name, env.shape[0], env.shape[1], path)


def load_env(path, table=None):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise EnvironmentError2D(f"{path}: malformed environment file at line {e.lineno}: {e.msg}") from e
    return env_from_dict(data, table)


def env_digest(env):
    """SHA-256 of the canonical environment serialization."""
    return hashlib.sha256(env_json(env).encode("utf-8")).hexdigest()

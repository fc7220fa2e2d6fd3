"""
Differentiable semantic and geometric costmaps, heightmaps and bilinear
interpolation with analytic spatial gradients.
"""

import logging
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)

MAGIC = b"IPCM1"
_HEADER = struct.Struct("<5sIIddd")


class CostMapError(ValueError):
    """Raised for invalid grids, smoothing settings and map files."""


@dataclass(frozen=True)
class SmoothingConfig:
    sigma1: float = 2.0
    sigma2: float = 3.0
    gradient_scale: float = 0.2
    inversion_scale: float = 0.2
    ramp_cap_fraction: float = 0.4

    def __post_init__(self):
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise CostMapError(f"smoothing sigmas must be positive, got {self.sigma1}, {self.sigma2}")
        if self.gradient_scale < 0 or self.inversion_scale < 0:
            raise CostMapError("shaping scales must be non-negative")
        if not 0 <= self.ramp_cap_fraction <= 1:
            raise CostMapError(f"ramp_cap_fraction must be in [0, 1], got {self.ramp_cap_fraction}")


@dataclass(frozen=True)
class _GridMap:
    values: np.ndarray
    resolution: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise CostMapError(f"map values must be a non-empty 2D grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise CostMapError("map values must be finite")
        if self.resolution <= 0:
            raise CostMapError(f"resolution must be positive, got {self.resolution}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self):
        return self.values.shape

    @property
    def extent(self):
        rows, cols = self.shape
        ox, oy = self.origin
        return ox, oy, ox + cols * self.resolution, oy + rows * self.resolution


@dataclass(frozen=True)
class CostMap(_GridMap):
    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise CostMapError("cost values must be non-negative")


@dataclass(frozen=True)
class HeightMap(_GridMap):
    pass


def gaussian_filter(grid, sigma):
    """
    Separable Gaussian blur

    The kernel is truncated at radius ceil(3 sigma) and renormalized; borders
    replicate the edge cells.

    Args:
        grid (numpy.ndarray): 2D field
        sigma (float): Standard deviation in cells

    Returns:
        numpy.ndarray: Filtered field
    """
    if sigma <= 0:
        raise CostMapError(f"sigma must be positive, got {sigma}")
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size and np.all(grid == grid.flat[0]):
        return grid.copy()
    return ndimage.gaussian_filter(grid, sigma, mode="nearest", radius=math.ceil(3 * sigma))


def gaussian_kernel(sigma):
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def signed_distance(mask, resolution):
    """
    Exact signed Euclidean distance transform

    Args:
        mask (numpy.ndarray): Boolean grid
        resolution (float): Cell size in meters

    Returns:
        numpy.ndarray: Meters to the nearest opposite-valued cell center,
            positive inside the mask, negative outside, zeros for a
            degenerate (all-true or all-false) mask
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.all() or not mask.any():
        return np.zeros(mask.shape)
    inside = ndimage.distance_transform_edt(mask)
    outside = ndimage.distance_transform_edt(~mask)
    return (inside - outside) * resolution


def _shape_costs(raw, table, cfg, resolution):
    smoothed = gaussian_filter(raw, cfg.sigma1)
    shaped = smoothed.copy()
    levels = sorted(set(np.unique(raw).tolist()))
    c_min = table.c_free

    for level in levels:
        if level == c_min:
            continue
        mask = raw == level
        sd = signed_distance(mask, resolution)
        upper = table.level_above(level)
        gap = (upper - level) if upper is not None else (level - table.level_below(level))
        cap = cfg.ramp_cap_fraction * gap
        ramp = np.minimum(cfg.gradient_scale * sd, cap)
        shaped[mask] += np.maximum(ramp[mask], 0.0)

    if c_min in levels:
        free = raw == c_min
        components, n = ndimage.label(free)
        sd = signed_distance(free, resolution)
        cap = cfg.ramp_cap_fraction * (table.level_above(c_min) - c_min)
        if n and np.any(sd != 0):
            depth = ndimage.maximum(sd, labels=components, index=np.arange(1, n + 1))
            d_comp = np.concatenate([[0.0], np.asarray(depth)])[components]
            inverted = np.minimum(cfg.inversion_scale * (d_comp - sd), cap)
            shaped[free] += np.maximum(inverted[free], 0.0)

    return np.maximum(gaussian_filter(shaped, cfg.sigma2), 0.0)


def build_costmap(env, table, cfg=None):
    """
    Semantic costmap of an environment

    Raw per-class costs are blurred, ramped up inside every costly region
    (distance to its boundary, capped below the next cost level), inverted
    inside the free regions so cost falls toward their centers, and blurred
    again.

    Args:
        env (Environment2D): Labelled world
        table (CostTable): Class costs
        cfg (SmoothingConfig): Shaping parameters, defaults when None

    Returns:
        CostMap: Non-negative cost field aligned with the environment grid
    """
    cfg = SmoothingConfig() if cfg is None else cfg
    if env.labels.size and env.labels.max() >= len(table.classes):
        raise CostMapError("environment labels are not covered by the cost table")
    raw = table.costs[env.labels]
    values = _shape_costs(raw, table, cfg, env.resolution)
    logger.debug("Built semantic costmap for %s: range [%.3f, %.3f]", env.name, values.min(), values.max())
    return CostMap(values, env.resolution)


def geometric_costmap(env, table=None, cfg=None):
    """Costmap from obstacle geometry alone: c_obs on obstacle cells, c_free elsewhere."""
    table = env.table if table is None else table
    cfg = SmoothingConfig() if cfg is None else cfg
    raw = np.where(table.obstacle[env.labels], table.c_obs, table.c_free)
    return CostMap(_shape_costs(raw, table, cfg, env.resolution), env.resolution)


def build_heightmap(env):
    return HeightMap(np.array(env.heights, dtype=np.float64), env.resolution)


def interpolate_many(grid_map, points):
    """
    Vectorized bilinear interpolation over cell centers

    Points outside the hull of cell centers are clamped onto it; the clamped
    axis then has zero gradient.

    Args:
        grid_map (CostMap or HeightMap): Field to sample
        points (numpy.ndarray): (n, 2) world xy points (extra columns ignored)

    Returns:
        tuple: (values (n,), gradients (n, 2), out_of_bounds (n,) bool)
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))[:, :2]
    rows, cols = grid_map.shape
    res = grid_map.resolution
    ox, oy = grid_map.origin
    x0, y0, x1, y1 = grid_map.extent
    out = (pts[:, 0] < x0) | (pts[:, 0] > x1) | (pts[:, 1] < y0) | (pts[:, 1] > y1)

    u = (pts[:, 0] - ox) / res - 0.5
    v = (pts[:, 1] - oy) / res - 0.5
    uc = np.clip(u, 0.0, cols - 1)
    vc = np.clip(v, 0.0, rows - 1)
    free_u = (u == uc) & (cols > 1)
    free_v = (v == vc) & (rows > 1)

    i0 = np.minimum(np.floor(uc).astype(int), max(cols - 2, 0))
    j0 = np.minimum(np.floor(vc).astype(int), max(rows - 2, 0))
    i1 = np.minimum(i0 + 1, cols - 1)
    j1 = np.minimum(j0 + 1, rows - 1)
    fx = uc - i0
    fy = vc - j0

    g = grid_map.values
    v00, v01 = g[j0, i0], g[j0, i1]
    v10, v11 = g[j1, i0], g[j1, i1]
    bottom = v00 * (1 - fx) + v01 * fx
    top = v10 * (1 - fx) + v11 * fx
    values = bottom * (1 - fy) + top * fy

    grads = np.zeros((len(pts), 2))
    grads[:, 0] = np.where(free_u, ((v01 - v00) * (1 - fy) + (v11 - v10) * fy) / res, 0.0)
    grads[:, 1] = np.where(free_v, (top - bottom) / res, 0.0)
    return values, grads, out


def interpolate(cost_map, p):
    """Bilinear cost and its (d/dx, d/dy) gradient at a world point."""
    values, grads, out = interpolate_many(cost_map, [p])
    if out[0]:
        logger.debug("Clamped out-of-bounds lookup at (%.3f, %.3f)", p[0], p[1])
    return float(values[0]), grads[0]


def height_at(height_map, p):
    values, grads, _ = interpolate_many(height_map, [p])
    return float(values[0]), grads[0]


@dataclass(frozen=True)
class MapSet:
    """Semantic, geometric and height fields of one environment."""

    env: object
    semantic: CostMap
    geometric: CostMap
    height: HeightMap

    def training_map(self, variant="semantic"):
        if variant == "semantic":
            return self.semantic
        if variant == "geometric":
            return self.geometric
        raise CostMapError(f"unknown costmap variant {variant!r}, expected 'semantic' or 'geometric'")


def build_maps(env, table=None, cfg=None):
    table = env.table if table is None else table
    return MapSet(
        env=env,
        semantic=build_costmap(env, table, cfg),
        geometric=geometric_costmap(env, table, cfg),
        height=build_heightmap(env),
    )


def save_grid_map(grid_map, path):
    rows, cols = grid_map.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, rows, cols, grid_map.resolution, *grid_map.origin))
        fh.write(grid_map.values.astype("<f8").tobytes(order="C"))


def load_grid_map(path, kind=CostMap):
    """
    Read an IPCM1 map file

    Args:
        path (str): File path
        kind (type): CostMap or HeightMap

    Returns:
        CostMap or HeightMap: The decoded map
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size or blob[:5] != MAGIC:
        raise CostMapError(f"{path}: not an IPCM1 map file")
    _, rows, cols, res, ox, oy = _HEADER.unpack_from(blob)
    expected = _HEADER.size + rows * cols * 8
    if len(blob) != expected:
        raise CostMapError(f"{path}: expected {expected} bytes for a {rows} x {cols} map, got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    return kind(values.astype(np.float64), res, (ox, oy))

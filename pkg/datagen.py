"""
Training-set generation: Halton viewpoints at robot-accessible locations, a
costmap-thresholded reachability graph and start/goal pairs with a controlled
share of goals inside the sensor field of view.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from costmap import build_heightmap, height_at, interpolate_many
from envworld import DepthScan, RobotPose, SemanticScan, SensorConfig, env_digest, normalize_angle, raycast
from semantics import DEFAULT_GROUP_COSTS

logger = logging.getLogger(__name__)

DATASET_FORMAT = "IPDS1"
DEFAULT_EDGE_THRESHOLD = DEFAULT_GROUP_COSTS["mid3"] + 0.25
DEFAULT_ACCESS_THRESHOLD = DEFAULT_EDGE_THRESHOLD
DRAW_CAP_FACTOR = 100


class DatagenError(RuntimeError):
    """Raised when sampling cannot produce the requested data."""


class DatasetFormatError(DatagenError, ValueError):
    """Raised for malformed dataset files."""


def halton(index, base):
    """
    Radical inverse of `index` in `base`

    Args:
        index (int): Sequence index, at least 1
        base (int): Base, at least 2 (a prime for low discrepancy)

    Returns:
        float: Value in (0, 1)
    """
    if index < 1 or base < 2:
        raise DatagenError(f"halton needs index >= 1 and base >= 2, got index={index} base={base}")
    f, r = 1.0, 0.0
    while index > 0:
        f = f / base
        r += f * (index % base)
        index //= base
    return r


def halton_points(start, count, width, height):
    """2D Halton points (bases 2 and 3) for indices start .. start+count-1, scaled to the extent."""
    idx = range(start, start + count)
    return np.array([[halton(i, 2) * width, halton(i, 3) * height] for i in idx]).reshape(-1, 2)


def sample_viewpoints(env, cost_map, n, access_threshold=DEFAULT_ACCESS_THRESHOLD):
    """
    Robot-accessible viewpoints along the Halton sequence

    Candidates are drawn in sequence order; a candidate is kept when its
    interpolated cost is below the threshold and it does not sit on an
    obstacle cell. At most 100 n candidates are drawn.

    Args:
        env (Environment2D): World to sample
        cost_map (CostMap): Accessibility field
        n (int): Number of viewpoints wanted
        access_threshold (float): Exclusive cost bound

    Returns:
        numpy.ndarray: (n, 2) accepted points in draw order

    Raises:
        DatagenError: When the draw cap is exhausted first
    """
    if n < 1:
        raise DatagenError(f"need at least one viewpoint, got n={n}")
    cap = DRAW_CAP_FACTOR * n
    candidates = halton_points(1, cap, env.width, env.height)
    costs, _, _ = interpolate_many(cost_map, candidates)
    obstacle = env.obstacle_mask()
    rows = np.minimum((candidates[:, 1] // env.resolution).astype(int), env.shape[0] - 1)
    cols = np.minimum((candidates[:, 0] // env.resolution).astype(int), env.shape[1] - 1)
    ok = (costs < access_threshold) & ~obstacle[rows, cols]

    accepted = np.flatnonzero(ok)
    if len(accepted) < n:
        rate = len(accepted) / cap
        raise DatagenError(
            f"only {len(accepted)} of {n} viewpoints accepted after {cap} draws (acceptance rate {rate:.2%})"
        )
    used = accepted[n - 1] + 1
    if used > 10 * n:
        logger.warning("Only %.1f%% of Halton draws were accessible; check the access threshold", 100.0 * n / used)
    logger.info("Sampled %d viewpoints from %d Halton draws", n, used)
    return candidates[accepted[:n]]


@dataclass
class ReachabilityGraph:
    """Undirected graph of viewpoints; edge weights are segment lengths."""

    points: np.ndarray
    adjacency: sparse.csr_matrix

    @property
    def n_vertices(self):
        return len(self.points)

    @property
    def edges(self):
        upper = sparse.triu(self.adjacency, k=1).tocoo()
        return sorted(zip(upper.row.tolist(), upper.col.tolist()))

    def has_edge(self, u, v):
        return self.adjacency[u, v] > 0

    def components(self):
        _, labels = csgraph.connected_components(self.adjacency, directed=False)
        return labels

    def reachable_from(self, vertex, labels=None):
        labels = self.components() if labels is None else labels
        same = np.flatnonzero(labels == labels[vertex])
        return same[same != vertex]

    def shortest_path(self, source, target):
        """Vertex sequence of the shortest path, or an empty list when disconnected."""
        dist, pred = csgraph.dijkstra(self.adjacency, directed=False, indices=source, return_predecessors=True)
        if not np.isfinite(dist[target]):
            return []
        path = [target]
        while path[-1] != source:
            path.append(int(pred[path[-1]]))
        return path[::-1]


def _max_costs_from(i, pts, cost_map, step):
    """Max interpolated cost along segments i -> j for every j > i."""
    others = pts[i + 1 :]
    if not len(others):
        return np.zeros(0)
    lengths = np.linalg.norm(others - pts[i], axis=1)
    counts = np.ceil(lengths / step).astype(int) + 1
    counts = np.maximum(counts, 2)
    pair = np.repeat(np.arange(len(others)), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(counts.sum()) - np.repeat(starts, counts)
    t = local / (np.repeat(counts, counts) - 1)
    samples = pts[i] + t[:, None] * (others[pair] - pts[i])
    values, _, _ = interpolate_many(cost_map, samples)
    return np.maximum.reduceat(values, starts)


def build_reachability_graph(points, cost_map, edge_threshold=DEFAULT_EDGE_THRESHOLD, step=None, workers=1):
    """
    Connect viewpoint pairs whose straight segment stays below the threshold

    Args:
        points (numpy.ndarray): (n, 2) viewpoints
        cost_map (CostMap): Field to test
        edge_threshold (float): Exclusive bound on every segment sample
        step (float): Sample spacing in meters, the map resolution when None
        workers (int): Thread pool size for the per-vertex sweeps

    Returns:
        ReachabilityGraph: Symmetric graph
    """
    step = cost_map.resolution if step is None else step
    if step <= 0:
        raise DatagenError(f"sampling step must be positive, got {step}")
    pts = np.asarray(points, dtype=np.float64)[:, :2]
    n = len(pts)

    def sweep(i):
        return _max_costs_from(i, pts, cost_map, step)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            max_costs = list(pool.map(sweep, range(n)))
    else:
        max_costs = [sweep(i) for i in range(n)]

    rows, cols, weights = [], [], []
    for i, costs in enumerate(max_costs):
        for j in np.flatnonzero(costs < edge_threshold) + i + 1:
            length = float(np.linalg.norm(pts[j] - pts[i]))
            rows += [i, j]
            cols += [j, i]
            # zero-length edges would vanish from the sparse matrix
            weights += [max(length, 1e-9)] * 2
    adjacency = sparse.csr_matrix((weights, (rows, cols)), shape=(n, n))
    logger.info("Reachability graph: %d vertices, %d edges", n, len(rows) // 2)
    return ReachabilityGraph(pts, adjacency)


@dataclass
class TrainingSample:
    env_id: str
    pose: RobotPose
    depth: DepthScan
    semantic: SemanticScan
    goal: np.ndarray
    goal_world: np.ndarray


def goal_in_fov(pose, goal_xy, fov):
    bearing = math.atan2(goal_xy[1] - pose.y, goal_xy[0] - pose.x)
    return abs(normalize_angle(bearing - pose.yaw)) <= fov / 2


def draw_start_goal(graph, n_pairs, fov_ratio, fov, rng, min_distance=0.0):
    """
    Draw start vertices, connected goals and start yaws

    A fov_ratio share of the draws aim the yaw so the goal bearing lies in the
    field of view; the rest use a uniform yaw.

    Args:
        graph (ReachabilityGraph): Viewpoint graph
        n_pairs (int): Number of draws
        fov_ratio (float): Share of draws with the goal in view, in [0, 1]
        fov (float): Sensor field of view in radians
        rng (numpy.random.Generator): Source of randomness
        min_distance (float): Goals closer than this to the start are not drawn

    Returns:
        list: (start index, goal index, yaw) tuples
    """
    if not 0 <= fov_ratio <= 1:
        raise DatagenError(f"fov_ratio must be in [0, 1], got {fov_ratio}")
    labels = graph.components()
    goals_of = {}
    for v in range(graph.n_vertices):
        reachable = graph.reachable_from(v, labels)
        far = np.linalg.norm(graph.points[reachable] - graph.points[v], axis=1) >= min_distance
        if far.any():
            goals_of[v] = reachable[far]
    if not goals_of:
        raise DatagenError(f"no connected pair of viewpoints at least {min_distance} m apart")
    candidates = np.array(sorted(goals_of))

    draws = []
    for _ in range(n_pairs):
        start = int(rng.choice(candidates))
        goal = int(rng.choice(goals_of[start]))
        dx, dy = graph.points[goal] - graph.points[start]
        if rng.random() < fov_ratio:
            yaw = math.atan2(dy, dx) + rng.uniform(-fov / 2, fov / 2)
        else:
            yaw = rng.uniform(-math.pi, math.pi)
        draws.append((start, goal, normalize_angle(yaw)))
    return draws


def robot_frame_goal(pose, goal_xy, height_map, h_r):
    """Goal in the robot frame; z is terrain at the goal plus h_r, relative to terrain under the robot."""
    gx, gy = pose.to_robot_frame(goal_xy[0], goal_xy[1])
    ground_robot, _ = height_at(height_map, (pose.x, pose.y))
    ground_goal, _ = height_at(height_map, goal_xy)
    return np.array([gx, gy, ground_goal - ground_robot + h_r])


def render_sample(env, table, sensor, pose, goal_xy, height_map, h_r, env_id):
    depth, semantic = raycast(env, table, pose, sensor.fov, sensor.n_rays, sensor.max_range)
    # stored as f4 on disk; round now so a round trip is lossless
    depth = DepthScan(depth.ranges.astype(np.float32).astype(np.float64), depth.fov, depth.max_range)
    ground_goal, _ = height_at(height_map, goal_xy)
    goal_world = np.array([goal_xy[0], goal_xy[1], float(ground_goal)])
    goal = robot_frame_goal(pose, goal_xy, height_map, h_r)
    return TrainingSample(env_id, pose, depth, semantic, goal, goal_world)


def generate_pairs(graph, env, table, sensor, n_pairs, fov_ratio=0.75, seed=0, height_map=None, h_r=0.5, workers=1):
    """
    Render start/goal training samples

    Args:
        graph (ReachabilityGraph): Viewpoint graph of the environment
        env (Environment2D): World to render
        table (CostTable): Taxonomy for rendering
        sensor (SensorConfig): Scan settings
        n_pairs (int): Number of samples
        fov_ratio (float): Share of in-view goals by construction
        seed (int): Random seed
        height_map (HeightMap): Terrain, flat when None
        h_r (float): Body height used for the goal z coordinate
        workers (int): Thread pool size for rendering

    Returns:
        list: TrainingSample records in draw order
    """
    sensor = SensorConfig() if sensor is None else sensor
    height_map = build_heightmap(env) if height_map is None else height_map
    rng = np.random.default_rng(seed)
    draws = draw_start_goal(graph, n_pairs, fov_ratio, sensor.fov, rng)
    env_id = env_digest(env)

    def render(draw):
        start, goal, yaw = draw
        sx, sy = graph.points[start]
        pose = RobotPose(float(sx), float(sy), yaw)
        return render_sample(env, table, sensor, pose, graph.points[goal], height_map, h_r, env_id)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(render, draws))
    else:
        samples = [render(d) for d in draws]
    in_view = sum(goal_in_fov(s.pose, s.goal_world, sensor.fov) for s in samples)
    logger.info("Generated %d samples, %d with the goal in view", len(samples), in_view)
    return samples


def _record_dtype(n_rays):
    return np.dtype(
        [
            ("pose", "<f8", (3,)),
            ("ranges", "<f4", (n_rays,)),
            ("colors", "u1", (n_rays, 3)),
            ("goal", "<f8", (3,)),
            ("goal_world", "<f8", (3,)),
        ]
    )


def export_dataset(samples, path, sensor=None, env_hash=None, h_r=0.5):
    """
    Write samples as a JSON header line followed by packed little-endian records

    Args:
        samples (list): TrainingSample records sharing one sensor setup
        path (str): Output file
        sensor (SensorConfig): Sensor settings, taken from the first sample when None
        env_hash (str): Environment digest, taken from the first sample when None
        h_r (float): Body height used for goal z coordinates
    """
    if not samples:
        raise DatagenError("refusing to export an empty dataset")
    first = samples[0]
    if sensor is None:
        sensor = SensorConfig(fov=first.depth.fov, n_rays=first.depth.n_rays, max_range=first.depth.max_range)
    header = {
        "format": DATASET_FORMAT,
        "env_hash": first.env_id if env_hash is None else env_hash,
        "sensor": {"fov": sensor.fov, "n_rays": sensor.n_rays, "max_range": sensor.max_range},
        "count": len(samples),
        "h_r": h_r,
    }
    records = np.zeros(len(samples), dtype=_record_dtype(sensor.n_rays))
    for i, s in enumerate(samples):
        if s.depth.n_rays != sensor.n_rays:
            raise DatagenError(f"sample {i} has {s.depth.n_rays} rays, dataset uses {sensor.n_rays}")
        records[i]["pose"] = (s.pose.x, s.pose.y, s.pose.yaw)
        records[i]["ranges"] = s.depth.ranges
        records[i]["colors"] = s.semantic.colors
        records[i]["goal"] = s.goal
        records[i]["goal_world"] = s.goal_world
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(records.tobytes())
    logger.info("Exported %d samples to %s", len(samples), path)


def import_dataset(path):
    """
    Read a dataset file written by export_dataset

    Args:
        path (str): Dataset file

    Returns:
        tuple: (list of TrainingSample, header dict)

    Raises:
        DatasetFormatError: Malformed header or truncated records
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    newline = blob.find(b"\n")
    if newline < 0:
        raise DatasetFormatError(f"{path}: line 1: missing header line")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetFormatError(f"{path}: line 1: malformed header: {e}") from e
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"{path}: line 1: not an {DATASET_FORMAT} dataset")
    try:
        sensor = SensorConfig(**header["sensor"])
        count = int(header["count"])
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetFormatError(f"{path}: line 1: incomplete header: {e}") from e

    dtype = _record_dtype(sensor.n_rays)
    offset = newline + 1
    expected = count * dtype.itemsize
    available = len(blob) - offset
    if available != expected:
        raise DatasetFormatError(
            f"{path}: byte offset {offset}: expected {expected} record bytes for {count} samples, found {available}"
        )
    records = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    env_id = header.get("env_hash", "")
    samples = [
        TrainingSample(
            env_id=env_id,
            pose=RobotPose(*map(float, r["pose"])),
            depth=DepthScan(r["ranges"].astype(np.float64), sensor.fov, sensor.max_range),
            semantic=SemanticScan(r["colors"].copy(), sensor.fov),
            goal=r["goal"].copy(),
            goal_world=r["goal_world"].copy(),
        )
        for r in records
    ]
    return samples, header

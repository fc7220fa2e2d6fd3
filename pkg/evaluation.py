"""
Closed-loop evaluation: replanning rollouts over random start/goal pairs,
goal-reached rates, traversability losses of the executed paths on the
semantic and geometric costmaps, and the semantic vs geometric-only comparison.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum

import numpy as np
import pandas as pd

from costmap import build_maps
from datagen import build_reachability_graph, draw_start_goal, robot_frame_goal, sample_viewpoints
from envworld import RobotPose, SensorConfig, blind_semantic_scan, perturb_scans, raycast
from format_utils import format_mean_std, format_percent
from losses import traversability_loss, world_trajectory
from planner import GateDecision, NetworkPolicy, PlannerConfig, PlannerParams, gate, init_params
from trajectory import Trajectory, compute_normals, point_at_distance
from training import TrainConfig, train, worker_count

logger = logging.getLogger(__name__)


class Outcome(str, Enum):
    REACHED = "reached"
    GATE_STOPPED = "gate-stopped"
    COLLIDED = "collided"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class RolloutConfig:
    goal_threshold: float = 0.5
    step_length: float = 1.0
    max_replans: int = 200
    delta_mu: float = 0.5
    variant: str = "semantic"
    retry_yaw: float = math.radians(15.0)
    w_r: float = 0.5
    h_r: float = 0.5
    samples_per_segment: int = 10
    start_fov_ratio: float = 1.0
    depth_noise_std: float = 0.0
    label_flip_prob: float = 0.0
    fov: float = math.pi / 2
    n_rays: int = 64
    max_range: float = 10.0

    def __post_init__(self):
        if self.goal_threshold <= 0:
            raise ValueError(f"goal_threshold must be positive, got {self.goal_threshold}")
        if self.max_replans < 1:
            raise ValueError(f"max_replans must be >= 1, got {self.max_replans}")
        if self.step_length <= 0:
            raise ValueError(f"step_length must be positive, got {self.step_length}")
        if self.variant not in ("semantic", "geometric"):
            raise ValueError(f"variant must be 'semantic' or 'geometric', got {self.variant!r}")
        if self.depth_noise_std < 0 or not 0 <= self.label_flip_prob <= 1:
            raise ValueError("noise settings must be non-negative probabilities / deviations")

    @property
    def sensor(self):
        return SensorConfig(self.fov, self.n_rays, self.max_range)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown rollout config key(s): {', '.join(unknown)}")
        return cls(**data)


@dataclass
class RolloutResult:
    path: np.ndarray
    outcome: Outcome
    replans: int
    gate_rejections: int
    terminal_distance: float
    start: RobotPose = None
    goal: tuple = None


def _as_policy(planner):
    return NetworkPolicy(planner) if isinstance(planner, PlannerParams) else planner


def _walk(env, traj, distance, goal_xy, threshold):
    """
    Follow a path for `distance` meters, checking every half cell

    Returns:
        tuple: (visited xy points, outcome or None, heading)
    """
    table = env.table
    sample_step = env.resolution / 2
    visited = []
    heading = None
    travelled = 0.0
    while True:
        travelled = min(travelled + sample_step, distance)
        point, heading, at_end = point_at_distance(traj, travelled)
        x, y = float(point[0]), float(point[1])
        label = env.class_at(x, y)
        if label is None or table.obstacle[label]:
            return visited, Outcome.COLLIDED, heading
        visited.append((x, y))
        if math.hypot(x - goal_xy[0], y - goal_xy[1]) < threshold:
            return visited, Outcome.REACHED, heading
        if travelled >= distance or at_end:
            return visited, None, heading


def rollout(planner, env, maps, start, goal, cfg=None, rng=None):
    """
    Replan-and-advance loop from a start pose to a goal point

    Each cycle renders scans, runs the planner and either advances the pose
    along the planned path by cfg.step_length or handles a gate rejection
    with one retry at a yaw perturbed by cfg.retry_yaw.

    Args:
        planner (PlannerParams or callable): Network parameters or a policy
            callable (depth, semantic, goal, pose) -> object with keypoints and mu
        env (Environment2D): Ground-truth world
        maps (MapSet): Maps of the world (height is used for frames)
        start (RobotPose): Initial pose
        goal (tuple): Goal (x, y) in world coordinates
        cfg (RolloutConfig): Loop settings
        rng (numpy.random.Generator): Noise and retry randomness

    Returns:
        RolloutResult: Executed path and outcome
    """
    cfg = RolloutConfig() if cfg is None else cfg
    rng = np.random.default_rng(0) if rng is None else rng
    policy = _as_policy(planner)
    table = env.table
    goal_xy = (float(goal[0]), float(goal[1]))
    if not (env.contains(start.x, start.y) and env.contains(*goal_xy)):
        raise ValueError("start and goal must lie inside the environment")

    pose = start
    path = [(pose.x, pose.y)]
    replans = rejections = 0
    retried = False
    outcome = None

    while outcome is None:
        if math.hypot(pose.x - goal_xy[0], pose.y - goal_xy[1]) < cfg.goal_threshold:
            outcome = Outcome.REACHED
            break
        if replans >= cfg.max_replans:
            outcome = Outcome.TIMEOUT
            break

        depth, semantic = raycast(env, table, pose, cfg.fov, cfg.n_rays, cfg.max_range)
        if cfg.depth_noise_std or cfg.label_flip_prob:
            depth, semantic = perturb_scans(depth, semantic, table, cfg.depth_noise_std, cfg.label_flip_prob, rng)
        if cfg.variant == "geometric":
            semantic = blind_semantic_scan(semantic, table)
        goal_r = robot_frame_goal(pose, goal_xy, maps.height, cfg.h_r)
        output = policy(depth, semantic, goal_r, pose)
        replans += 1

        if gate(output, cfg.delta_mu) is GateDecision.REJECT:
            rejections += 1
            if retried:
                outcome = Outcome.GATE_STOPPED
                break
            retried = True
            sign = 1.0 if rng.random() < 0.5 else -1.0
            pose = RobotPose(pose.x, pose.y, pose.yaw + sign * cfg.retry_yaw)
            logger.debug("Gate rejected mu=%.3f; retrying at yaw %.3f", output.mu, pose.yaw)
            continue
        retried = False

        traj = world_trajectory(output.keypoints, pose, maps.height, cfg.h_r, cfg.samples_per_segment)
        visited, outcome, heading = _walk(env, traj, cfg.step_length, goal_xy, cfg.goal_threshold)
        path.extend(visited)
        end = path[-1]
        yaw = math.atan2(heading[1], heading[0]) if heading is not None else pose.yaw
        pose = RobotPose(end[0], end[1], yaw)

    end = path[-1]
    result = RolloutResult(
        path=np.array(path),
        outcome=outcome,
        replans=replans,
        gate_rejections=rejections,
        terminal_distance=math.hypot(end[0] - goal_xy[0], end[1] - goal_xy[1]),
        start=start,
        goal=goal_xy,
    )
    logger.debug("Rollout finished: %s after %d replans", outcome.value, replans)
    return result


def path_trajectory(path, h_r=0.5):
    """Executed xy points as a trajectory with normals (z set to h_r)."""
    pts = np.asarray(path, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 1:
        pts = np.vstack([pts, pts])
    waypoints = np.column_stack([pts, np.full(len(pts), h_r)])
    return compute_normals(Trajectory(waypoints=waypoints))


def path_losses(path, maps, w_r=0.5):
    traj = path_trajectory(path)
    geom, _ = traversability_loss(traj, maps.geometric, w_r)
    sem, _ = traversability_loss(traj, maps.semantic, w_r)
    return geom, sem


def _stats(values):
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    if not len(ordered):
        return float("nan"), float("nan")
    return float(ordered.mean()), float(ordered.std())


@dataclass
class EvalReport:
    n_pairs: int
    goal_reached: float
    geom_loss_mean: float
    geom_loss_std: float
    sem_loss_mean: float
    sem_loss_std: float
    rejected_by_gate: float
    collisions: float
    timeouts: float
    results: list = field(default_factory=list, repr=False)

    @classmethod
    def from_results(cls, results, maps, w_r=0.5):
        n = len(results)
        outcomes = [r.outcome for r in results]
        losses = [path_losses(r.path, maps, w_r) for r in results]
        geom_mean, geom_std = _stats([g for g, _ in losses])
        sem_mean, sem_std = _stats([s for _, s in losses])
        return cls(
            n_pairs=n,
            goal_reached=outcomes.count(Outcome.REACHED) / n,
            geom_loss_mean=geom_mean,
            geom_loss_std=geom_std,
            sem_loss_mean=sem_mean,
            sem_loss_std=sem_std,
            rejected_by_gate=outcomes.count(Outcome.GATE_STOPPED) / n,
            collisions=outcomes.count(Outcome.COLLIDED) / n,
            timeouts=outcomes.count(Outcome.TIMEOUT) / n,
            results=list(results),
        )

    def to_dict(self):
        data = asdict(self)
        data.pop("results")
        return data

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_frame(self):
        return pd.DataFrame(
            [
                {
                    "start_x": r.start.x,
                    "start_y": r.start.y,
                    "goal_x": r.goal[0],
                    "goal_y": r.goal[1],
                    "outcome": r.outcome.value,
                    "replans": r.replans,
                    "terminal_distance": r.terminal_distance,
                }
                for r in self.results
            ]
        )

    def summary_lines(self):
        return [
            f"pairs:            {self.n_pairs}",
            f"goal reached:     {format_percent(self.goal_reached)}",
            f"geom loss:        {format_mean_std(self.geom_loss_mean, self.geom_loss_std)}",
            f"sem loss:         {format_mean_std(self.sem_loss_mean, self.sem_loss_std)}",
            f"rejected by gate: {format_percent(self.rejected_by_gate)}",
            f"collisions:       {format_percent(self.collisions)}",
        ]


def evaluation_pairs(env, maps, n_pairs, cfg, seed, graph=None, n_viewpoints=None):
    """Start poses and goals drawn from the reachability graph, goals at least 2 thresholds away."""
    rng = np.random.default_rng(seed)
    if graph is None:
        n_viewpoints = n_viewpoints or max(2 * n_pairs, 50)
        points = sample_viewpoints(env, maps.semantic, n_viewpoints)
        graph = build_reachability_graph(points, maps.semantic, workers=worker_count())
    draws = draw_start_goal(graph, n_pairs, cfg.start_fov_ratio, cfg.fov, rng, min_distance=2 * cfg.goal_threshold)
    pairs = []
    for start, goal, yaw in draws:
        sx, sy = graph.points[start]
        pairs.append((RobotPose(float(sx), float(sy), yaw), tuple(float(v) for v in graph.points[goal])))
    return pairs


def evaluate(planner, env, maps, n_pairs, cfg=None, seed=0, graph=None, workers=None, score_w_r=None):
    """
    Roll out a planner over random start/goal pairs

    Args:
        planner (PlannerParams or callable): Network parameters or a policy
        env (Environment2D): World
        maps (MapSet): Semantic, geometric and height maps of the world
        n_pairs (int): Number of pairs, at least 1
        cfg (RolloutConfig): Rollout settings
        seed (int): Pair and noise seed
        graph (ReachabilityGraph): Reuse an existing viewpoint graph
        workers (int): Thread pool size
        score_w_r (float): Robot half-width used to score executed paths,
            cfg.w_r when None

    Returns:
        EvalReport: Aggregated outcomes and path losses
    """
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be >= 1, got {n_pairs}")
    cfg = RolloutConfig() if cfg is None else cfg
    workers = worker_count() if workers is None else workers
    pairs = evaluation_pairs(env, maps, n_pairs, cfg, seed, graph)

    def run(item):
        i, (start, goal) = item
        return rollout(planner, env, maps, start, goal, cfg, np.random.default_rng([seed, i]))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, enumerate(pairs)))
    else:
        results = [run(item) for item in enumerate(pairs)]

    score_w_r = cfg.w_r if score_w_r is None else score_w_r
    report = EvalReport.from_results(results, maps, score_w_r)
    logger.info(
        "Evaluated %d pairs: reached %s, sem loss %s",
        n_pairs,
        format_percent(report.goal_reached),
        format_mean_std(report.sem_loss_mean, report.sem_loss_std),
    )
    return report


@dataclass
class Comparison:
    reports: dict
    table: pd.DataFrame
    relative_change: float


def blind_samples(samples, table):
    """Copies of the samples with all-"unknown" semantic scans."""
    return [replace(s, semantic=blind_semantic_scan(s.semantic, table)) for s in samples]


def compare_variants(
    samples,
    env,
    seeds,
    train_cfg=None,
    rollout_cfg=None,
    n_pairs=100,
    include_point_baseline=False,
    planner_config=None,
    maps=None,
):
    """
    Train and evaluate the semantic and geometric-only planners side by side

    The geometric-only planner sees all-"unknown" semantic scans and is
    supervised by the geometric costmap. The optional point baseline is the
    geometric-only planner trained for a zero-width robot. Every variant is
    scored with the robot width of `rollout_cfg`.

    Args:
        samples (list): Training samples rendered in `env`
        env (Environment2D): World
        seeds (list): Seeds; each trains and evaluates every variant once
        train_cfg (TrainConfig): Base training settings
        rollout_cfg (RolloutConfig): Base rollout settings
        n_pairs (int): Evaluation pairs per seed
        include_point_baseline (bool): Add the zero-width geometric planner
        planner_config (PlannerConfig): Network hyperparameters
        maps (MapSet): Prebuilt maps of `env`

    Returns:
        Comparison: Per-variant reports, a summary table and the relative
            semantic-loss change (semantic - geometric) / geometric
    """
    train_cfg = TrainConfig() if train_cfg is None else train_cfg
    rollout_cfg = RolloutConfig() if rollout_cfg is None else rollout_cfg
    maps = build_maps(env) if maps is None else maps
    n_rays = samples[0].depth.n_rays
    planner_config = PlannerConfig(n_rays=n_rays) if planner_config is None else planner_config
    blind = blind_samples(samples, env.table)

    variants = {
        "semantic": (samples, {"variant": "semantic"}, {"variant": "semantic"}),
        "geometric": (blind, {"variant": "geometric"}, {"variant": "geometric"}),
    }
    if include_point_baseline:
        variants["point"] = (blind, {"variant": "geometric", "w_r": 0.0}, {"variant": "geometric", "w_r": 0.0})

    reports = {name: [] for name in variants}
    for seed in seeds:
        for name, (data, train_overrides, rollout_overrides) in variants.items():
            cfg = replace(train_cfg, seed=seed, **train_overrides)
            params0 = init_params(seed, planner_config, h_r=cfg.h_r)
            params, history = train(data, maps, params0, cfg)
            logger.info("Variant %s seed %d stopped at epoch %d (%s)", name, seed, history.stop_epoch, history.stop_reason)
            r_cfg = replace(rollout_cfg, **rollout_overrides)
            reports[name].append(evaluate(params, env, maps, n_pairs, r_cfg, seed, score_w_r=rollout_cfg.w_r))

    rows = []
    for name, runs in reports.items():
        rows.append(
            {
                "variant": name,
                "goal_reached": float(np.mean([r.goal_reached for r in runs])),
                "geom_loss": float(np.mean([r.geom_loss_mean for r in runs])),
                "sem_loss": float(np.mean([r.sem_loss_mean for r in runs])),
                "rejected_by_gate": float(np.mean([r.rejected_by_gate for r in runs])),
                "collisions": float(np.mean([r.collisions for r in runs])),
            }
        )
    table = pd.DataFrame(rows)
    by_variant = table.set_index("variant")["sem_loss"]
    relative = relative_change(by_variant["semantic"], by_variant["geometric"])
    return Comparison(reports, table, relative)


def relative_change(semantic_loss, geometric_loss):
    if geometric_loss == 0:
        return float("nan")
    return (semantic_loss - geometric_loss) / geometric_loss

"""
Planning policy: depth and semantic scan encoders, a goal embedding, a fused
trunk and two heads (keypoints and collision probability).
"""

import logging
import math
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from autodiff import Graph

logger = logging.getLogger(__name__)

MAGIC = b"IPNN1"
_HYPER = struct.Struct("<5s7I")


class PlannerError(ValueError):
    """Raised for inconsistent hyperparameters, inputs and checkpoints."""


class GateDecision(str, Enum):
    EXECUTE = "execute"
    REJECT = "reject"


@dataclass(frozen=True)
class PlannerConfig:
    n_rays: int = 64
    c_i: int = 16
    c_g: int = 4
    m: int = 8
    n_k: int = 5
    enc_hidden: int = 128
    trunk_hidden: int = 128

    def __post_init__(self):
        if self.c_g < 3:
            raise PlannerError(f"goal channels C_G must be >= 3, got {self.c_g}")
        for name in ("n_rays", "c_i", "m", "n_k", "enc_hidden", "trunk_hidden"):
            if getattr(self, name) < 1:
                raise PlannerError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def fused_dim(self):
        return (2 * self.c_i + self.c_g) * self.m

    def shapes(self):
        """Parameter name -> shape, in checkpoint order."""
        h, t = self.enc_hidden, self.trunk_hidden
        feat = self.c_i * self.m
        return {
            "depth.w1": (self.n_rays, h),
            "depth.b1": (h,),
            "depth.w2": (h, feat),
            "depth.b2": (feat,),
            "sem.w1": (3 * self.n_rays, h),
            "sem.b1": (h,),
            "sem.w2": (h, feat),
            "sem.b2": (feat,),
            "goal.w": (3, self.c_g * self.m),
            "goal.b": (self.c_g * self.m,),
            "trunk.w1": (self.fused_dim, t),
            "trunk.b1": (t,),
            "trunk.w2": (t, t),
            "trunk.b2": (t,),
            "kp.w": (t, 3 * self.n_k),
            "kp.b": (3 * self.n_k,),
            "col.w": (t, 1),
            "col.b": (1,),
        }


@dataclass
class PlannerParams:
    config: PlannerConfig
    weights: dict

    def __post_init__(self):
        expected = self.config.shapes()
        if set(self.weights) != set(expected):
            missing = sorted(set(expected) - set(self.weights))
            extra = sorted(set(self.weights) - set(expected))
            raise PlannerError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            w = np.asarray(self.weights[name], dtype=np.float64)
            if w.shape != shape:
                raise PlannerError(f"parameter {name} has shape {w.shape}, expected {shape}")
            if not np.all(np.isfinite(w)):
                raise PlannerError(f"parameter {name} has non-finite values")
            self.weights[name] = w

    def copy(self):
        return PlannerParams(self.config, {k: v.copy() for k, v in self.weights.items()})

    def n_parameters(self):
        return sum(w.size for w in self.weights.values())


@dataclass
class PlannerOutput:
    keypoints: np.ndarray
    mu: float
    mu_logit: float
    graph: Graph = field(default=None, repr=False)
    keypoint_node: object = field(default=None, repr=False)
    logit_node: object = field(default=None, repr=False)


def init_params(seed=0, config=None, h_r=0.5, step=1.0):
    """
    Seeded uniform initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)]

    The keypoint-head bias makes an untrained network step forward by `step`
    meters per keypoint, with the first keypoint at body height h_r.

    Args:
        seed (int): Random seed
        config (PlannerConfig): Hyperparameters, defaults when None
        h_r (float): Body height above terrain in meters
        step (float): Initial forward spacing of keypoints in meters

    Returns:
        PlannerParams: Fresh parameters
    """
    config = PlannerConfig() if config is None else config
    rng = np.random.default_rng(seed)
    shapes = config.shapes()
    weights = {}
    for name, shape in shapes.items():
        # biases share the fan-in of their layer's weight matrix
        bound = 1.0 / math.sqrt(shapes[name.replace(".b", ".w")][0])
        weights[name] = rng.uniform(-bound, bound, size=shape)

    deltas = weights["kp.b"].reshape(config.n_k, 3)
    deltas[:, 0] = step
    deltas[:, 1] = 0.0
    deltas[:, 2] = 0.0
    deltas[0, 2] = h_r
    return PlannerParams(config, weights)


def _check_scan(n, config, kind):
    if n != config.n_rays:
        raise PlannerError(f"{kind} scan has {n} rays, network expects {config.n_rays}")


def _mlp(graph, x, p, prefix):
    h = graph.relu(graph.add(graph.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
    return graph.add(graph.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])


def depth_input(scan):
    return np.asarray(scan.ranges, dtype=np.float64) / scan.max_range


def semantic_input(scan):
    return np.asarray(scan.colors, dtype=np.float64).reshape(-1) / 255.0


def _layers(graph, params, prefixes):
    return {k: graph.parameter(k, v) for k, v in params.weights.items() if k.split(".")[0] in prefixes}


def _depth_features(g, p, scan, cfg):
    _check_scan(scan.n_rays, cfg, "depth")
    return g.reshape(_mlp(g, g.constant(depth_input(scan)), p, "depth"), (cfg.c_i, cfg.m))


def _semantic_features(g, p, scan, cfg):
    _check_scan(scan.n_rays, cfg, "semantic")
    return g.reshape(_mlp(g, g.constant(semantic_input(scan)), p, "sem"), (cfg.c_i, cfg.m))


def _goal_features(g, p, goal, cfg):
    goal = np.asarray(goal, dtype=np.float64)
    if goal.shape != (3,):
        raise PlannerError(f"goal must be a 3-vector, got shape {goal.shape}")
    return g.reshape(g.add(g.matmul(g.constant(goal), p["goal.w"]), p["goal.b"]), (cfg.c_g, cfg.m))


def plan(depth, semantic, goal, params):
    """
    Run the policy on one observation

    Args:
        depth (DepthScan): Range scan
        semantic (SemanticScan): Class-color scan
        goal (array): Goal (x, y, z) in the robot frame
        params (PlannerParams): Network parameters

    Returns:
        PlannerOutput: Keypoints, collision probability and the recorded graph
    """
    cfg = params.config
    g = Graph()
    p = _layers(g, params, ("depth", "sem", "goal", "trunk", "kp", "col"))
    o_d = _depth_features(g, p, depth, cfg)
    o_s = _semantic_features(g, p, semantic, cfg)
    o_p = _goal_features(g, p, goal, cfg)

    fused = g.reshape(g.concat([o_d, o_s, o_p], axis=0), (cfg.fused_dim,))
    h = g.relu(g.add(g.matmul(fused, p["trunk.w1"]), p["trunk.b1"]))
    h = g.relu(g.add(g.matmul(h, p["trunk.w2"]), p["trunk.b2"]))

    deltas = g.reshape(g.add(g.matmul(h, p["kp.w"]), p["kp.b"]), (cfg.n_k, 3))
    keypoints = g.matmul(g.constant(np.tril(np.ones((cfg.n_k, cfg.n_k)))), deltas)
    logit = g.add(g.matmul(h, p["col.w"]), p["col.b"])
    mu = g.sigmoid(logit)
    return PlannerOutput(
        keypoints=keypoints.value.copy(),
        mu=float(mu.value[0]),
        mu_logit=float(logit.value[0]),
        graph=g,
        keypoint_node=keypoints,
        logit_node=logit,
    )


def encode_depth(scan, params):
    """Depth embedding of shape (C_I, M)."""
    g = Graph()
    return _depth_features(g, _layers(g, params, ("depth",)), scan, params.config).value.copy()


def encode_semantic(scan, params):
    """Semantic embedding of shape (C_I, M)."""
    g = Graph()
    return _semantic_features(g, _layers(g, params, ("sem",)), scan, params.config).value.copy()


def embed_goal(goal, params):
    """Goal embedding of shape (C_G, M); a single affine map of the goal coordinates."""
    g = Graph()
    return _goal_features(g, _layers(g, params, ("goal",)), goal, params.config).value.copy()


def gate(output, delta_mu=0.5):
    """Execute iff the collision probability is strictly below delta_mu."""
    return GateDecision.EXECUTE if output.mu < delta_mu else GateDecision.REJECT


class NetworkPolicy:
    """Callable wrapper so rollouts treat networks and scripted planners alike."""

    def __init__(self, params):
        self.params = params

    def __call__(self, depth, semantic, goal, pose=None):
        return plan(depth, semantic, goal, self.params)


def save_checkpoint(params, path):
    cfg = params.config
    with open(path, "wb") as fh:
        fh.write(_HYPER.pack(MAGIC, cfg.c_i, cfg.c_g, cfg.m, cfg.n_k, cfg.n_rays, cfg.enc_hidden, cfg.trunk_hidden))
        fh.write(struct.pack("<I", len(params.weights)))
        for name, shape in cfg.shapes().items():
            encoded = name.encode("ascii")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape))
            fh.write(params.weights[name].astype("<f8").tobytes(order="C"))
    logger.info("Saved checkpoint with %d parameters to %s", params.n_parameters(), path)


def load_checkpoint(path):
    """
    Read an IPNN1 checkpoint

    Args:
        path (str): File path

    Returns:
        PlannerParams: Decoded parameters

    Raises:
        PlannerError: Bad magic, truncated blocks or inconsistent shapes
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HYPER.size + 4 or blob[:5] != MAGIC:
        raise PlannerError(f"{path}: not an IPNN1 checkpoint")
    _, c_i, c_g, m, n_k, n_rays, enc_hidden, trunk_hidden = _HYPER.unpack_from(blob)
    config = PlannerConfig(n_rays=n_rays, c_i=c_i, c_g=c_g, m=m, n_k=n_k, enc_hidden=enc_hidden, trunk_hidden=trunk_hidden)
    offset = _HYPER.size
    (n_blocks,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    weights = {}
    try:
        for _ in range(n_blocks):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("ascii")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) * 8
            if offset + size > len(blob):
                raise PlannerError(f"{path}: block {name!r} truncated at byte {offset}")
            weights[name] = np.frombuffer(blob, dtype="<f8", count=size // 8, offset=offset).reshape(shape).astype(np.float64)
            offset += size
    except struct.error as e:
        raise PlannerError(f"{path}: truncated checkpoint at byte {offset}") from e
    if offset != len(blob):
        raise PlannerError(f"{path}: {len(blob) - offset} trailing bytes after the last block")
    return PlannerParams(config, weights)

"""
Bi-level training loop: policy forward pass, spline and task losses on the
costmap, loss gradients injected into network backprop, SGD with momentum,
step learning-rate decay and early stopping.
"""

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from format_utils import format_loss_line
from losses import DEFAULT_OBSTACLE_THRESHOLD, LossBreakdown, LossWeights, total_loss
from planner import PlannerParams, plan

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "lr", "train_total", "val_total", "T_trav", "T_goal", "T_motion", "T_height", "C"]


class TrainingError(RuntimeError):
    """Raised for invalid training setups and non-finite losses."""


def worker_count():
    """Worker cap from IMPPLAN_THREADS, default 1."""
    raw = os.environ.get("IMPPLAN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("Ignoring non-integer IMPPLAN_THREADS=%r", raw)
        return 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 16
    max_epochs: int = 100
    lr_decay: float = 0.5
    lr_step: int = 20
    patience: int = 10
    min_delta: float = 1e-4
    alpha: float = 5.0
    beta: float = 2.0
    gamma: float = 1.0
    delta: float = 2.0
    w_r: float = 0.5
    h_r: float = 0.5
    delta_mu: float = 0.5
    obstacle_threshold: float = DEFAULT_OBSTACLE_THRESHOLD
    samples_per_segment: int = 10
    seed: int = 0
    variant: str = "semantic"
    val_fraction: float = 0.1
    max_grad_norm: float = None

    def __post_init__(self):
        if not math.isfinite(self.lr) or self.lr < 0:
            raise ValueError(f"lr must be finite and >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.lr_step < 1 or not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr schedule needs lr_step >= 1 and lr_decay in (0, 1], got {self.lr_step}, {self.lr_decay}")
        if self.variant not in ("semantic", "geometric"):
            raise ValueError(f"variant must be 'semantic' or 'geometric', got {self.variant!r}")
        if not 0 < self.val_fraction < 1:
            raise ValueError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ValueError(f"max_grad_norm must be positive when set, got {self.max_grad_norm}")
        LossWeights(self.alpha, self.beta, self.gamma, self.delta)

    @property
    def weights(self):
        return LossWeights(self.alpha, self.beta, self.gamma, self.delta)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown training config key(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    lr_trace: list = field(default_factory=list)
    stop_epoch: int = 0
    stop_reason: str = "max-epochs"
    best_epoch: int = 0

    def add(self, epoch, lr, train_loss, val_loss):
        self.train.append(train_loss)
        self.validation.append(val_loss)
        self.lr_trace.append(lr)
        row = val_loss.as_row()
        self.records.append(
            {
                "epoch": epoch,
                "lr": lr,
                "train_total": train_loss.total,
                "val_total": val_loss.total,
                "T_trav": row["T_trav"],
                "T_goal": row["T_goal"],
                "T_motion": row["T_motion"],
                "T_height": row["T_height"],
                "C": row["C"],
            }
        )

    def to_frame(self):
        return pd.DataFrame(self.records, columns=HISTORY_COLUMNS)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.10g")


def sample_loss(params, sample, maps, cfg):
    output = plan(sample.depth, sample.semantic, sample.goal, params)
    if not (np.all(np.isfinite(output.keypoints)) and math.isfinite(output.mu_logit)):
        raise TrainingError(f"non-finite network output (mu logit {output.mu_logit!r})")
    breakdown = total_loss(
        output.keypoints,
        output.mu,
        maps.training_map(cfg.variant),
        maps.height,
        sample.goal,
        cfg.weights,
        cfg.w_r,
        cfg.h_r,
        pose=sample.pose,
        samples_per_segment=cfg.samples_per_segment,
        obstacle_threshold=cfg.obstacle_threshold,
    )
    return output, breakdown


def sample_gradients(params, sample, maps, cfg):
    """
    Loss and parameter gradients for one training sample

    Args:
        params (PlannerParams): Current parameters
        sample (TrainingSample): Observation, pose and goal
        maps (MapSet): Costmaps of the sample's environment
        cfg (TrainConfig): Loss and variant settings

    Returns:
        tuple: (LossBreakdown, dict of parameter gradients)
    """
    output, breakdown = sample_loss(params, sample, maps, cfg)
    graph = output.graph
    graph.inject_external_gradient(output.keypoint_node, breakdown.grad_keypoints)
    graph.inject_external_gradient(output.logit_node, np.array([breakdown.grad_mu_logit]))
    return breakdown, graph.backward()


def sgd_step(params, grads, lr, velocity=None, momentum=0.0):
    """
    One SGD-with-momentum update: v = m v + g; p = p - lr v

    Returns:
        tuple: (updated PlannerParams, updated velocity dict)
    """
    velocity = {k: np.zeros_like(v) for k, v in params.weights.items()} if velocity is None else velocity
    new_velocity = {k: momentum * velocity[k] + grads[k] for k in params.weights}
    new_weights = {k: params.weights[k] - lr * new_velocity[k] for k in params.weights}
    return PlannerParams(params.config, new_weights), new_velocity


def clip_gradients(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def _check_finite(index, breakdown):
    if not math.isfinite(breakdown.total) or not np.all(np.isfinite(breakdown.grad_keypoints)):
        raise TrainingError(f"non-finite loss at sample {index}: {format_loss_line(breakdown.as_row())}")


def validate(params, samples, maps, cfg):
    """Mean loss breakdown over a split; forward and loss only."""
    if not samples:
        raise TrainingError("validation split is empty")
    losses = []
    for i, sample in enumerate(samples):
        _, breakdown = sample_loss(params, sample, maps, cfg)
        _check_finite(i, breakdown)
        losses.append(breakdown)
    return LossBreakdown.mean(losses)


def split_dataset(samples, cfg):
    """Seeded train/validation split; tiny datasets validate on the training set."""
    if len(samples) < 2:
        return list(samples), list(samples)
    n_val = max(1, int(round(cfg.val_fraction * len(samples))))
    train_idx, val_idx = train_test_split(np.arange(len(samples)), test_size=n_val, random_state=cfg.seed, shuffle=True)
    return [samples[i] for i in sorted(train_idx)], [samples[i] for i in sorted(val_idx)]


def train(samples, maps, params, cfg=None, val_samples=None, workers=None):
    """
    Train the policy end to end through the path losses

    Args:
        samples (list): TrainingSample records
        maps (MapSet): Costmaps of the environment the samples come from
        params (PlannerParams): Initial parameters
        cfg (TrainConfig): Optimization settings, defaults when None
        val_samples (list): Explicit validation split; split off `samples` when None
        workers (int): Thread pool size for per-sample gradients

    Returns:
        tuple: (best-validation PlannerParams, TrainHistory)
    """
    cfg = TrainConfig() if cfg is None else cfg
    if not samples:
        raise TrainingError("dataset is empty")
    workers = worker_count() if workers is None else workers
    if val_samples is None:
        train_set, val_set = split_dataset(samples, cfg)
    else:
        train_set, val_set = list(samples), list(val_samples)
    logger.info("Training on %d samples, validating on %d (variant=%s)", len(train_set), len(val_set), cfg.variant)

    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    lr = cfg.lr
    velocity = None

    best_val = validate(params, val_set, maps, cfg)
    history.add(0, lr, validate(params, train_set, maps, cfg), best_val)
    best_params, best_total, stale = params.copy(), best_val.total, 0
    reference = best_total

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            order = rng.permutation(len(train_set))
            epoch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch = [int(i) for i in order[start : start + cfg.batch_size]]

                def work(i, current=params):
                    try:
                        return sample_gradients(current, train_set[i], maps, cfg)
                    except TrainingError as e:
                        raise TrainingError(f"sample {i}: {e}") from e

                results = list(pool.map(work, batch)) if pool else [work(i) for i in batch]
                summed = {k: np.zeros_like(v) for k, v in params.weights.items()}
                for i, (breakdown, grads) in zip(batch, results):
                    _check_finite(i, breakdown)
                    epoch_losses.append(breakdown)
                    for k in summed:
                        summed[k] += grads[k]
                mean_grads = clip_gradients({k: g / len(batch) for k, g in summed.items()}, cfg.max_grad_norm)
                params, velocity = sgd_step(params, mean_grads, lr, velocity, cfg.momentum)

            val_loss = validate(params, val_set, maps, cfg)
            history.add(epoch, lr, LossBreakdown.mean(epoch_losses), val_loss)
            logger.info("epoch %d lr=%.5g train %s | val total=%.4f", epoch, lr, format_loss_line(history.train[-1].as_row()), val_loss.total)

            if val_loss.total < best_total:
                best_params, best_total = params.copy(), val_loss.total
                history.best_epoch = epoch
            if val_loss.total < reference - cfg.min_delta:
                reference, stale = val_loss.total, 0
            else:
                stale += 1
            history.stop_epoch = epoch
            if stale >= cfg.patience:
                history.stop_reason = "early-stop"
                logger.info("Early stop at epoch %d; best epoch %d (val total %.4f)", epoch, history.best_epoch, best_total)
                break
            if epoch % cfg.lr_step == 0:
                lr *= cfg.lr_decay
    finally:
        if pool:
            pool.shutdown()

    return best_params, history

import json
import logging
import math
from dataclasses import asdict

import pandas as pd
from sqlalchemy.exc import SQLAlchemyError

import database as db
from training import HISTORY_COLUMNS

logger = logging.getLogger(__name__)


class ResultsStoreError(RuntimeError):
    """The results database could not be opened or written."""


RUN_COLUMNS = [
    "id",
    "kind",
    "name",
    "variant",
    "seed",
    "env_hash",
    "stop_epoch",
    "stop_reason",
    "best_epoch",
    "best_val_total",
    "goal_reached",
    "sem_loss_mean",
    "created_at",
]


def initialize_database(url=None):
    """Initialize the database by creating all tables"""
    try:
        if url is not None:
            db.configure(url)
        db.create_tables()
    except SQLAlchemyError as e:
        raise ResultsStoreError(f"cannot open results store: {e}") from e
    logger.info("Database tables created")


def _finite(value):
    value = float(value)
    return value if math.isfinite(value) else None


def record_training_run(history, cfg, name=None, env_hash=None):
    """
    Store a training history and its configuration

    Args:
        history (TrainHistory): Epoch records from training.train
        cfg (TrainConfig): Configuration the run used
        name (str): Optional label, e.g. the checkpoint path
        env_hash (str): Digest of the training environment

    Returns:
        database.Run: The stored run
    """
    best = history.validation[history.best_epoch].total if history.validation else None
    run = db.Run(
        kind="train",
        name=name,
        variant=cfg.variant,
        seed=cfg.seed,
        env_hash=env_hash,
        config_json=json.dumps(cfg.to_dict(), sort_keys=True),
        stop_epoch=history.stop_epoch,
        stop_reason=history.stop_reason,
        best_epoch=history.best_epoch,
        best_val_total=None if best is None else _finite(best),
    )
    for row in history.records:
        run.epochs.append(
            db.EpochRecord(
                epoch=int(row["epoch"]),
                lr=_finite(row["lr"]),
                train_total=_finite(row["train_total"]),
                val_total=_finite(row["val_total"]),
                t_trav=_finite(row["T_trav"]),
                t_goal=_finite(row["T_goal"]),
                t_motion=_finite(row["T_motion"]),
                t_height=_finite(row["T_height"]),
                collision=_finite(row["C"]),
            )
        )
    try:
        db.session.add(run)
        db.session.commit()
    except SQLAlchemyError as e:
        db.session.rollback()
        raise ResultsStoreError(f"cannot record run: {e}") from e
    logger.info("Recorded training run %d (%d epochs)", run.id, len(history.records))
    return run


def record_evaluation(report, cfg=None, name=None, seed=None, env_hash=None, variant=None):
    """
    Store an evaluation report

    Args:
        report (EvalReport): Aggregated evaluation
        cfg (RolloutConfig): Rollout settings, stored as JSON
        name (str): Optional label, e.g. the checkpoint path
        seed (int): Pair seed
        env_hash (str): Digest of the evaluation environment
        variant (str): Label overriding cfg.variant, e.g. "point"

    Returns:
        database.Run: The stored run
    """
    if variant is None and cfg is not None:
        variant = cfg.variant
    run = db.Run(
        kind="eval",
        name=name,
        variant=variant,
        seed=seed,
        env_hash=env_hash,
        config_json=None if cfg is None else json.dumps(asdict(cfg), sort_keys=True),
    )
    run.evaluations.append(
        db.EvalRecord(
            n_pairs=report.n_pairs,
            goal_reached=_finite(report.goal_reached),
            geom_loss_mean=_finite(report.geom_loss_mean),
            geom_loss_std=_finite(report.geom_loss_std),
            sem_loss_mean=_finite(report.sem_loss_mean),
            sem_loss_std=_finite(report.sem_loss_std),
            rejected_by_gate=_finite(report.rejected_by_gate),
            collisions=_finite(report.collisions),
            timeouts=_finite(report.timeouts),
        )
    )
    try:
        db.session.add(run)
        db.session.commit()
    except SQLAlchemyError as e:
        db.session.rollback()
        raise ResultsStoreError(f"cannot record run: {e}") from e
    logger.info("Recorded evaluation run %d (%d pairs)", run.id, report.n_pairs)
    return run


def list_runs(kind=None):
    """
    Get recorded runs

    Args:
        kind (str): Filter on "train" or "eval"

    Returns:
        pandas.DataFrame: One row per run, newest last
    """
    query = db.session.query(db.Run)
    if kind is not None:
        query = query.filter(db.Run.kind == kind)
    rows = []
    for run in query.order_by(db.Run.id).all():
        evaluation = run.evaluations[0] if run.evaluations else None
        rows.append(
            {
                "id": run.id,
                "kind": run.kind,
                "name": run.name,
                "variant": run.variant,
                "seed": run.seed,
                "env_hash": run.env_hash,
                "stop_epoch": run.stop_epoch,
                "stop_reason": run.stop_reason,
                "best_epoch": run.best_epoch,
                "best_val_total": run.best_val_total,
                "goal_reached": None if evaluation is None else evaluation.goal_reached,
                "sem_loss_mean": None if evaluation is None else evaluation.sem_loss_mean,
                "created_at": run.created_at,
            }
        )
    return pd.DataFrame(rows, columns=RUN_COLUMNS)


def get_history(run_id):
    """
    Get the epoch records of a training run

    Args:
        run_id (int): Run id

    Returns:
        pandas.DataFrame: Columns as in the history CSV; empty if the run is unknown
    """
    run = db.session.get(db.Run, run_id)
    if run is None:
        return pd.DataFrame(columns=HISTORY_COLUMNS)
    return pd.DataFrame(
        [
            [e.epoch, e.lr, e.train_total, e.val_total, e.t_trav, e.t_goal, e.t_motion, e.t_height, e.collision]
            for e in run.epochs
        ],
        columns=HISTORY_COLUMNS,
    )

import logging
import os
from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, relationship, sessionmaker

logger = logging.getLogger(__name__)

# Get database URL from environment variable
DATABASE_URL = os.environ.get("DATABASE_URL")


def _make_engine(url):
    if url is None:
        logger.warning("DATABASE_URL environment variable not set. Using SQLite in-memory database.")
        return create_engine("sqlite:///:memory:")
    return create_engine(url)


engine = _make_engine(DATABASE_URL)

# Create base class for models
Base = declarative_base()


class Run(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True)
    kind = Column(String, nullable=False)  # train | eval
    name = Column(String)
    variant = Column(String)
    seed = Column(Integer)
    env_hash = Column(String)
    config_json = Column(Text)
    stop_epoch = Column(Integer)
    stop_reason = Column(String)
    best_epoch = Column(Integer)
    best_val_total = Column(Float)
    created_at = Column(DateTime, default=datetime.utcnow)

    # Relationships
    epochs = relationship("EpochRecord", back_populates="run", cascade="all, delete-orphan", order_by="EpochRecord.epoch")
    evaluations = relationship("EvalRecord", back_populates="run", cascade="all, delete-orphan")

    def __repr__(self):
        return f"<Run(id={self.id}, kind='{self.kind}', variant='{self.variant}', seed={self.seed})>"


class EpochRecord(Base):
    __tablename__ = "epoch_records"

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False)
    epoch = Column(Integer, nullable=False)
    lr = Column(Float)
    train_total = Column(Float)
    val_total = Column(Float)
    t_trav = Column(Float)
    t_goal = Column(Float)
    t_motion = Column(Float)
    t_height = Column(Float)
    collision = Column(Float)

    # Relationships
    run = relationship("Run", back_populates="epochs")

    def __repr__(self):
        return f"<EpochRecord(run={self.run_id}, epoch={self.epoch}, val_total={self.val_total})>"


class EvalRecord(Base):
    __tablename__ = "eval_records"

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False)
    n_pairs = Column(Integer, nullable=False)
    goal_reached = Column(Float)
    geom_loss_mean = Column(Float)
    geom_loss_std = Column(Float)
    sem_loss_mean = Column(Float)
    sem_loss_std = Column(Float)
    rejected_by_gate = Column(Float)
    collisions = Column(Float)
    timeouts = Column(Float)

    # Relationships
    run = relationship("Run", back_populates="evaluations")

    def __repr__(self):
        return f"<EvalRecord(run={self.run_id}, n_pairs={self.n_pairs}, goal_reached={self.goal_reached})>"


# Create database session
Session = sessionmaker(bind=engine)
session = Session()


def configure(url):
    """Rebind the module engine and session to another database URL."""
    global engine, session
    session.close()
    engine = _make_engine(url)
    Session.configure(bind=engine)
    session = Session()
    return engine


# Function to create tables
def create_tables():
    Base.metadata.create_all(engine)


# Function to drop tables
def drop_tables():
    Base.metadata.drop_all(engine)

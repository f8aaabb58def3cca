"""
Database models for experiment records and their per-cell selection runs
"""
from datetime import datetime

from sqlalchemy import Boolean, Column, DateTime, Float, ForeignKey, Integer, String, Text, UniqueConstraint
from sqlalchemy.orm import relationship

from app.core.database import Base


class ExperimentRecord(Base):
    """One experiment definition, identified by the hash of its JSON"""
    __tablename__ = "experiments"

    id = Column(Integer, primary_key=True, index=True)
    spec_key = Column(String(64), unique=True, index=True, nullable=False)
    method = Column(String(16), nullable=False)
    spec_json = Column(Text, nullable=False)
    dataset_hash = Column(String(64), nullable=True)
    created_at = Column(DateTime, default=datetime.utcnow)

    # Relationships
    runs = relationship("SelectionRun", back_populates="experiment", cascade="all, delete-orphan")


class SelectionRun(Base):
    """One selection run (column, repeat) plus its checkpoint accuracies"""
    __tablename__ = "selection_runs"
    __table_args__ = (UniqueConstraint("experiment_id", "column", "repeat", name="uq_run_cell"),)

    id = Column(Integer, primary_key=True, index=True)
    experiment_id = Column(Integer, ForeignKey("experiments.id"), nullable=False)
    column = Column(String(32), nullable=False)
    threshold = Column(Float, nullable=True)  # None for the IG column
    repeat = Column(Integer, nullable=False)
    seed = Column(Integer, nullable=False)
    retained = Column(Text, nullable=False)  # JSON list of band indices
    trace = Column(Text, nullable=False)  # JSON list of trace rows
    accuracies = Column(Text, nullable=False)  # JSON {band_count: [overall, average]}
    aborted = Column(Boolean, default=False)
    created_at = Column(DateTime, default=datetime.utcnow)

    # Relationships
    experiment = relationship("ExperimentRecord", back_populates="runs")

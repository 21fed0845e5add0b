from sqlalchemy import BigInteger, Column, DateTime, ForeignKey, Integer, String, Enum as SQLEnum
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func
from app.database import Base
import enum


class ExperimentKind(str, enum.Enum):
    TASKREL = "taskrel"
    IPDETECT = "ipdetect"
    UNLEARN = "unlearn"
    FINGERPRINT_ONLY = "fingerprint-only"


class ArtifactKind(str, enum.Enum):
    CHECKPOINT = "checkpoint"
    REFSET = "refset"
    FINGERPRINT = "fingerprint"
    DISTANCES = "distances"
    AFFINITY = "affinity"
    DENDROGRAM = "dendrogram"
    REPORT = "report"
    MANIFEST = "manifest"


class Run(Base):
    __tablename__ = "runs"

    id = Column(String(32), primary_key=True, index=True)
    experiment = Column(SQLEnum(ExperimentKind, values_callable=lambda kinds: [k.value for k in kinds]),
                        nullable=False)
    config_hash = Column(String(16), nullable=False, index=True)  # hex of the u64 hash
    output_dir = Column(String(512), nullable=False)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    models = relationship("ZooModel", back_populates="run", cascade="all, delete-orphan")
    artifacts = relationship("Artifact", back_populates="run", cascade="all, delete-orphan")


class ZooModel(Base):
    __tablename__ = "zoo_models"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String(32), ForeignKey("runs.id"), nullable=False, index=True)
    model_id = Column(String(128), nullable=False)
    kind = Column(String(32), nullable=False)
    parent_id = Column(String(128), nullable=True)
    seed = Column(String(20), nullable=False)
    config_hash = Column(String(16), nullable=False)
    checkpoint_path = Column(String(512), nullable=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    run = relationship("Run", back_populates="models")


class Artifact(Base):
    __tablename__ = "artifacts"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String(32), ForeignKey("runs.id"), nullable=False, index=True)
    kind = Column(SQLEnum(ArtifactKind, values_callable=lambda kinds: [k.value for k in kinds]),
                  nullable=False)
    model_id = Column(String(128), nullable=True)
    name = Column(String(255), nullable=False)
    path = Column(String(512), nullable=False)
    config_hash = Column(String(16), nullable=False)
    crc32 = Column(BigInteger, nullable=False)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    run = relationship("Run", back_populates="artifacts")

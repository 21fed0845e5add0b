from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app.config import (
    ARTIFACT_ROOT,
    DEFAULT_JOBS,
    DEFAULT_PGD_ALPHA,
    DEFAULT_PGD_EPS,
    DEFAULT_PGD_STEPS,
    DEFAULT_REFS,
    DEFAULT_STEPS,
)
from app.exceptions import ConfigError
from app.models import ArtifactKind, ExperimentKind
from app.utils import config_hash


def _comma_list(value):
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class Section(BaseModel):
    class Config:
        extra = "forbid"


class DataSection(Section):
    samples: Optional[int] = Field(None, gt=0)
    noise: Optional[float] = Field(None, ge=0)
    classes: Optional[int] = Field(None, ge=2)


class ZooSection(Section):
    epochs: Optional[int] = Field(None, ge=1)
    lr: Optional[float] = Field(None, gt=0)
    batch: Optional[int] = Field(None, ge=1)
    thetas: Optional[List[float]] = None
    permuted_control: bool = True
    per_family: Optional[int] = Field(None, ge=0)
    independent: Optional[int] = Field(None, ge=0)
    include_transfer: bool = False
    forget: Optional[int] = Field(None, ge=1)
    unlearn_epochs: Optional[int] = Field(None, ge=1)
    checkpoint_dir: Optional[str] = None

    @field_validator("thetas", mode="before")
    @classmethod
    def split_thetas(cls, value):
        return _comma_list(value)


class SamplerSection(Section):
    kind: Literal["random", "cutmix", "pgd", "given"] = "random"
    refs: int = Field(DEFAULT_REFS, ge=1)
    seed: Optional[int] = Field(None, ge=0)
    pgd_steps: int = Field(DEFAULT_PGD_STEPS, ge=1)
    pgd_alpha: float = Field(DEFAULT_PGD_ALPHA, gt=0)
    pgd_eps: float = Field(DEFAULT_PGD_EPS, gt=0)
    refset_file: Optional[str] = None
    probe_checkpoint: Optional[str] = None


class CurveSection(Section):
    steps: int = Field(DEFAULT_STEPS, ge=2)
    baseline: Literal["zero", "random"] = "zero"
    rule: Literal["midpoint", "right"] = "midpoint"
    trunk_only: bool = False


class DistanceSection(Section):
    metric: Literal["cosine", "ig-cosine", "hausdorff", "frechet"] = "cosine"


class SweepSection(Section):
    refs: List[int] = Field(default_factory=list)
    kinds: List[Literal["random", "cutmix", "pgd"]] = Field(default_factory=list)

    @field_validator("refs", "kinds", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _comma_list(value)


class RunConfig(Section):
    """Validated run configuration; unknown keys are rejected at every level."""

    experiment: ExperimentKind
    seed: int = Field(0, ge=0)
    jobs: int = Field(DEFAULT_JOBS, ge=1)
    output_dir: str = f"{ARTIFACT_ROOT}/default"
    data: DataSection = Field(default_factory=DataSection)
    zoo: ZooSection = Field(default_factory=ZooSection)
    sampler: SamplerSection = Field(default_factory=SamplerSection)
    curve: CurveSection = Field(default_factory=CurveSection)
    distance: DistanceSection = Field(default_factory=DistanceSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    @model_validator(mode="after")
    def referenced_files_exist(self):
        for key, value in (("sampler.refset_file", self.sampler.refset_file),
                           ("sampler.probe_checkpoint", self.sampler.probe_checkpoint),
                           ("zoo.checkpoint_dir", self.zoo.checkpoint_dir)):
            if value is not None and not Path(value).exists():
                raise ValueError(f"{key} points to a missing path: {value}")
        if self.sampler.kind == "given" and self.sampler.refset_file is None \
                and self.experiment != ExperimentKind.UNLEARN:
            raise ValueError("sampler.kind=given needs sampler.refset_file")
        return self

    @property
    def sampler_seed(self) -> int:
        return self.seed if self.sampler.seed is None else self.sampler.seed

    @property
    def hash(self) -> int:
        """Hash of everything that affects results; jobs and output location are excluded."""
        return config_hash(self.model_dump(mode="json", exclude={"jobs", "output_dir"}))


def nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    """{'sampler.kind': 'pgd'} -> {'sampler': {'kind': 'pgd'}}."""
    tree: Dict[str, Any] = {}
    for key, value in flat.items():
        node = tree
        *sections, leaf = key.strip().split(".")
        for section in sections:
            child = node.setdefault(section, {})
            if not isinstance(child, dict):
                raise ConfigError(f"key {key!r} conflicts with scalar {section!r}")
            node = child
        node[leaf] = value
    return tree


def _merge(base: Dict[str, Any], extra: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Reads a key=value config file; dotted override keys win over the file."""
    flat: Dict[str, Any] = {}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        flat = {k: v for k, v in dotenv_values(path).items() if v is not None and v != ""}
    tree = _merge(nest(flat), nest({k: v for k, v in (overrides or {}).items() if v is not None}))
    try:
        return RunConfig(**tree)
    except ValidationError as exc:
        raise ConfigError(f"invalid run config: {exc}") from exc


# ==================== API ====================

class HealthResponse(BaseModel):
    status: str = "ok"
    format_version: int


class RunResponse(BaseModel):
    id: str
    experiment: ExperimentKind
    config_hash: str
    output_dir: str
    created_at: Optional[datetime] = None

    class Config:
        from_attributes = True


class ZooModelResponse(BaseModel):
    model_id: str
    kind: str
    parent_id: Optional[str] = None
    seed: str
    config_hash: str
    checkpoint_path: Optional[str] = None

    class Config:
        from_attributes = True
        protected_namespaces = ()


class ArtifactResponse(BaseModel):
    id: int
    kind: ArtifactKind
    model_id: Optional[str] = None
    name: str
    path: str
    config_hash: str
    crc32: int
    created_at: Optional[datetime] = None

    class Config:
        from_attributes = True
        protected_namespaces = ()


class DistanceRequest(BaseModel):
    run_id: str
    first: str
    second: str
    metric: Literal["cosine", "ig-cosine", "hausdorff", "frechet"] = "cosine"


class DistanceResponse(BaseModel):
    first: str
    second: str
    metric: str
    distance: float
    affinity: float
    curves: int

"""
Experiment protocols: task relatedness, stolen-model detection and unlearning verification,
plus the reference-count sweep. Each protocol is zoo -> reference set -> fingerprints ->
distances -> report, with every stage also reachable on its own from the CLI.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from app.analysis import (
    DetectionReport,
    Dendrogram,
    UnlearningReport,
    cluster,
    detection_report,
    ground_truth_affinity,
    spearman,
    unlearning_report,
)
from app.distance import AffinityMatrix, DistanceMatrix, Metric, distance_matrix, to_affinity
from app.datasets import DatasetSplit
from app.exceptions import ConfigError
from app.formats import load_refset
from app.gif_engine import BaselineMode, GiFCurveSet, QuadratureRule, check_completeness, fingerprint
from app.model_zoo import (
    IPZooSpec,
    LineageKind,
    TaskZooSpec,
    TrainConfig,
    UnlearnZooSpec,
    Zoo,
    ZooManifest,
    build_ip_zoo,
    build_task_zoo,
    build_unlearning_zoo,
)
from app.models import ExperimentKind
from app.reference_sampler import PGDConfig, ReferenceSet, SamplerKind, sample_given, sample_references
from app.schemas import RunConfig
from app.tensor_core import DiffModel

logger = logging.getLogger(__name__)


# ==================== Zoo ====================

def _train_config(cfg: RunConfig, base: TrainConfig) -> TrainConfig:
    return TrainConfig(epochs=cfg.zoo.epochs or base.epochs, lr=cfg.zoo.lr or base.lr,
                       batch=cfg.zoo.batch or base.batch, seed=cfg.seed)


def task_zoo_spec(cfg: RunConfig) -> TaskZooSpec:
    base = TaskZooSpec()
    thetas = tuple(cfg.zoo.thetas) if cfg.zoo.thetas is not None else base.thetas
    if not thetas:
        raise ConfigError("no models requested")
    return replace(base, thetas=thetas, permuted_control=cfg.zoo.permuted_control,
                   samples=cfg.data.samples or base.samples, train=_train_config(cfg, base.train), seed=cfg.seed)


def ip_zoo_spec(cfg: RunConfig) -> IPZooSpec:
    base = IPZooSpec()
    per_family = base.per_family if cfg.zoo.per_family is None else cfg.zoo.per_family
    independent = base.independent if cfg.zoo.independent is None else cfg.zoo.independent
    if per_family == 0 and independent == 0:
        raise ConfigError("no models requested")
    classes = cfg.data.classes or base.num_classes
    return replace(base, samples=cfg.data.samples or base.samples, num_classes=classes,
                   noise=base.noise if cfg.data.noise is None else cfg.data.noise,
                   arch=replace(base.arch, outputs=classes),
                   independent_arches=tuple(replace(a, outputs=classes) for a in base.independent_arches),
                   train=_train_config(cfg, base.train), per_family=per_family, independent=independent,
                   include_transfer=cfg.zoo.include_transfer, seed=cfg.seed)


def unlearn_zoo_spec(cfg: RunConfig) -> UnlearnZooSpec:
    base = UnlearnZooSpec()
    classes = cfg.data.classes or base.num_classes
    return replace(base, samples=cfg.data.samples or base.samples, num_classes=classes,
                   noise=base.noise if cfg.data.noise is None else cfg.data.noise,
                   forget=cfg.zoo.forget or base.forget, arch=replace(base.arch, outputs=classes),
                   train=_train_config(cfg, base.train),
                   unlearn=replace(base.unlearn, epochs=cfg.zoo.unlearn_epochs or base.unlearn.epochs,
                                   seed=cfg.seed),
                   seed=cfg.seed)


def build_zoo(cfg: RunConfig) -> Tuple[Zoo, Dict[str, DatasetSplit]]:
    """The zoo of the configured experiment and the datasets its reference points come from."""
    if cfg.experiment == ExperimentKind.TASKREL:
        spec = task_zoo_spec(cfg)
        return build_task_zoo(spec, cfg.jobs), spec.datasets()
    if cfg.experiment == ExperimentKind.IPDETECT:
        spec = ip_zoo_spec(cfg)
        return build_ip_zoo(spec, cfg.jobs), spec.datasets()
    if cfg.experiment == ExperimentKind.UNLEARN:
        spec = unlearn_zoo_spec(cfg)
        return build_unlearning_zoo(spec, cfg.jobs), spec.datasets()
    raise ConfigError("fingerprint-only runs load an existing zoo from zoo.checkpoint_dir")


def reference_pool(cfg: RunConfig, datasets: Dict[str, DatasetSplit]) -> List[DatasetSplit]:
    if cfg.experiment == ExperimentKind.TASKREL:
        return list(datasets.values())
    return [datasets["train"]]


def compared_ids(zoo: Zoo) -> List[str]:
    """Every model except the PGD probe."""
    return [entry.model_id for entry in zoo.manifest if entry.kind != LineageKind.PROBE]


# ==================== Reference points and fingerprints ====================

def pgd_config(cfg: RunConfig) -> PGDConfig:
    return PGDConfig(steps=cfg.sampler.pgd_steps, alpha=cfg.sampler.pgd_alpha, eps=cfg.sampler.pgd_eps)


def make_refset(cfg: RunConfig, datasets: Dict[str, DatasetSplit], probe: Optional[DiffModel] = None,
                kind: Optional[str] = None, count: Optional[int] = None) -> ReferenceSet:
    """Unlearning runs always use the forget set as their reference points."""
    kind = SamplerKind.parse(kind or cfg.sampler.kind)
    count = count or cfg.sampler.refs
    if cfg.experiment == ExperimentKind.UNLEARN:
        forget = datasets["forget"]
        return sample_given(forget.inputs, cfg.sampler_seed, forget.ids.tolist())
    if kind == SamplerKind.GIVEN:
        refset, _ = load_refset(cfg.sampler.refset_file)
        return refset
    return sample_references(kind, reference_pool(cfg, datasets), count, cfg.sampler_seed,
                             probe=probe, pgd=pgd_config(cfg))


def fingerprint_options(cfg: RunConfig) -> dict:
    return {
        "baseline_mode": BaselineMode.parse(cfg.curve.baseline),
        "steps": cfg.curve.steps,
        "seed": cfg.sampler_seed,
        "rule": QuadratureRule[cfg.curve.rule.upper()],
        "trunk_only": cfg.curve.trunk_only,
    }


def fingerprint_zoo(models: Dict[str, DiffModel], ids: Sequence[str], refset: ReferenceSet,
                    cfg: RunConfig) -> List[GiFCurveSet]:
    options = fingerprint_options(cfg)
    fps = []
    for model_id in ids:
        fp = fingerprint(models[model_id], refset, model_id=model_id, jobs=cfg.jobs, **options)
        check_completeness(models[model_id], fp)
        fps.append(fp)
    return fps


# ==================== Reports ====================

@dataclass
class TaskRelatednessResult:
    distances: DistanceMatrix
    affinity: AffinityMatrix
    dendrogram: Dendrogram
    spearman: float


def task_relatedness(dm: DistanceMatrix, angles: Dict[str, float]) -> TaskRelatednessResult:
    affinity = to_affinity(dm)
    truth = ground_truth_affinity(angles, dm.ids)
    rho = spearman(affinity.values, truth)
    logger.info("Spearman(ModelGiF affinity, -|dtheta|) = %.4f", rho)
    return TaskRelatednessResult(dm, affinity, cluster(affinity), rho)


def ip_detection(dm: DistanceMatrix, manifest: ZooManifest) -> DetectionReport:
    kinds = {entry.model_id: entry.kind.value for entry in manifest}
    families = [k.value for k in LineageKind if k.value in set(kinds.values())
                and k not in (LineageKind.VICTIM, LineageKind.INDEPENDENT, LineageKind.PROBE)]
    return detection_report(dm, "victim", kinds, LineageKind.INDEPENDENT.value, families)


def unlearning(dm: DistanceMatrix) -> UnlearningReport:
    approx = sorted(model_id for model_id in dm.ids if model_id.startswith("unlearn-approx-"))
    report = unlearning_report(dm["reference", "unrelated"], dm["reference", "unlearn-exact"],
                               [dm["reference", model_id] for model_id in approx])
    logger.info("Unlearning: exact_detected=%s approx_incomplete=%s forgetting_trend=%s",
                report.exact_detected, report.approx_incomplete, report.forgetting_trend)
    return report


def reference_count_sweep(fingerprints_by_kind: Dict[str, List[GiFCurveSet]], counts: Sequence[int],
                          angles: Dict[str, float], metric: Metric = Metric.COSINE
                          ) -> List[Tuple[str, int, float]]:
    """Task-relatedness Spearman recomputed on the first K curves of each fingerprint."""
    rows = []
    for kind, fps in fingerprints_by_kind.items():
        for count in counts:
            if count > fps[0].count:
                raise ConfigError(f"sweep K={count} exceeds the {fps[0].count} sampled {kind} points")
            dm = distance_matrix([fp.prefix(count) for fp in fps], metric)
            rows.append((kind, count, task_relatedness(dm, angles).spearman))
    return rows


def sweep(cfg: RunConfig, models: Dict[str, DiffModel], ids: Sequence[str],
          datasets: Dict[str, DatasetSplit], probe: Optional[DiffModel]) -> List[Tuple[str, int, float]]:
    """One reference set of max(K) points per sampler kind, then Spearman on its prefixes."""
    largest = max(cfg.sweep.refs)
    by_kind = {kind: fingerprint_zoo(models, ids, make_refset(cfg, datasets, probe, kind, largest), cfg)
               for kind in (cfg.sweep.kinds or [cfg.sampler.kind])}
    return reference_count_sweep(by_kind, cfg.sweep.refs, task_zoo_spec(cfg).ground_truth_angles(),
                                 Metric.parse(cfg.distance.metric))


@dataclass
class ExperimentResult:
    zoo: Zoo
    refset: ReferenceSet
    fingerprints: List[GiFCurveSet]
    distances: DistanceMatrix
    taskrel: Optional[TaskRelatednessResult] = None
    detection: Optional[DetectionReport] = None
    unlearning: Optional[UnlearningReport] = None
    sweep: List[Tuple[str, int, float]] = field(default_factory=list)


def run_experiment(cfg: RunConfig) -> ExperimentResult:
    """Whole protocol in memory."""
    zoo, datasets = build_zoo(cfg)
    probe = zoo.models.get("probe")
    refset = make_refset(cfg, datasets, probe)
    ids = compared_ids(zoo)
    fps = fingerprint_zoo(zoo.models, ids, refset, cfg)
    dm = distance_matrix(fps, cfg.distance.metric, cfg.jobs)
    result = ExperimentResult(zoo, refset, fps, dm)
    if cfg.experiment == ExperimentKind.TASKREL:
        angles = task_zoo_spec(cfg).ground_truth_angles()
        result.taskrel = task_relatedness(dm, angles)
        if cfg.sweep.refs:
            result.sweep = sweep(cfg, zoo.models, ids, datasets, probe)
    elif cfg.experiment == ExperimentKind.IPDETECT:
        result.detection = ip_detection(dm, zoo.manifest)
    elif cfg.experiment == ExperimentKind.UNLEARN:
        result.unlearning = unlearning(dm)
    return result

"""
modelgif command line.

    modelgif zoo          --config run.env     train the zoo, write checkpoints + manifest
    modelgif sample-refs  --config run.env     write the reference set
    modelgif fingerprint  --config run.env [ids...]
    modelgif distances    --config run.env     distance + affinity matrices
    modelgif report       --config run.env     experiment-specific outputs

Every artifact embeds the config hash; later stages refuse artifacts from another config.
"""

import argparse
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from app import experiments
from app.analysis import cluster
from app.config import EXIT_OK, configure_logging
from app.database import SessionLocal, init_db
from app.datasets import DatasetSplit
from app.distance import DistanceMatrix, Metric, distance_matrix, to_affinity
from app.exceptions import ConfigError, IncomparableError, ModelGifError
from app.formats import (
    decode_manifest,
    decode_matrix,
    encode_manifest,
    encode_matrix,
    encode_roc,
    encode_rows,
    load_fingerprint,
    load_model,
    load_refset,
    read_config_hash,
    save_fingerprint,
    save_model,
    save_refset,
    save_text,
)
from app.model_zoo import LineageKind, ZooEntry, ZooManifest
from app.models import ArtifactKind, ExperimentKind
from app.reference_sampler import ReferenceSet
from app.registry import Registry
from app.schemas import RunConfig, load_run_config
from app.tensor_core import DiffModel
from app.utils import format_hash, stable_hash

logger = logging.getLogger("modelgif")


class RunLayout:
    """File names inside a run's output directory."""

    def __init__(self, root: str):
        self.root = Path(root)

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.txt"

    def checkpoint(self, model_id: str) -> Path:
        return self.root / "models" / f"{model_id}.mgmd"

    @property
    def refset(self) -> Path:
        return self.root / "refset.mgrs"

    def fingerprint(self, model_id: str) -> Path:
        return self.root / "fingerprints" / f"{model_id}.mgif"

    @property
    def distances(self) -> Path:
        return self.root / "distances.csv"

    @property
    def affinity(self) -> Path:
        return self.root / "affinity.csv"

    def report(self, name: str) -> Path:
        return self.root / "reports" / name


class Stage:
    """Shared state of one CLI invocation: config, layout and registry."""

    def __init__(self, cfg: RunConfig, registry: Registry):
        self.cfg = cfg
        self.hash = cfg.hash
        self.layout = RunLayout(cfg.output_dir)
        self.registry = registry
        self.run_id = f"RUN-{format_hash(stable_hash(f'{self.hash}:{self.layout.root.resolve()}'))[:12].upper()}"
        registry.open_run(self.run_id, cfg.experiment, self.hash, self.layout.root)

    def require(self, path: Path, own_hash: bool = True) -> Path:
        if not path.exists():
            raise ConfigError(f"missing artifact {path}; run the earlier stage first")
        if own_hash:
            found = read_config_hash(path)
            if found != self.hash:
                raise IncomparableError(f"{path} was produced by config {format_hash(found)}, "
                                        f"this run is {format_hash(self.hash)}", (str(path),))
        return path

    def written(self, path: Path, kind: ArtifactKind, model_id: Optional[str] = None) -> Path:
        self.registry.record_artifact(self.run_id, kind, path, self.hash, model_id)
        logger.info("Wrote %s", path)
        return path

    # ---- loading ----

    def manifest(self) -> ZooManifest:
        if self.cfg.experiment == ExperimentKind.FINGERPRINT_ONLY:
            return self._external_manifest()
        manifest, _ = decode_manifest(self.require(self.layout.manifest).read_text())
        return manifest

    def _external_manifest(self) -> ZooManifest:
        if self.cfg.zoo.checkpoint_dir is None:
            raise ConfigError("fingerprint-only runs need zoo.checkpoint_dir")
        manifest = ZooManifest()
        for path in sorted(Path(self.cfg.zoo.checkpoint_dir).glob("*.mgmd")):
            _, cfg_hash = load_model(path)
            manifest.add(ZooEntry(path.stem, LineageKind.INDEPENDENT, None, 0, cfg_hash))
        if len(manifest) == 0:
            raise ConfigError("no models requested")
        return manifest

    def checkpoint_path(self, model_id: str) -> Path:
        if self.cfg.experiment == ExperimentKind.FINGERPRINT_ONLY:
            return Path(self.cfg.zoo.checkpoint_dir) / f"{model_id}.mgmd"
        return self.layout.checkpoint(model_id)

    def model(self, model_id: str) -> DiffModel:
        own = self.cfg.experiment != ExperimentKind.FINGERPRINT_ONLY
        model, _ = load_model(self.require(self.checkpoint_path(model_id), own_hash=own))
        return model

    def probe(self, manifest: ZooManifest) -> Optional[DiffModel]:
        if self.cfg.sampler.probe_checkpoint:
            model, _ = load_model(self.cfg.sampler.probe_checkpoint)
            return model
        if "probe" in manifest.ids():
            return self.model("probe")
        return None

    def refset(self) -> ReferenceSet:
        refset, _ = load_refset(self.require(self.layout.refset))
        return refset

    def compared_ids(self, manifest: ZooManifest) -> List[str]:
        return [e.model_id for e in manifest if e.kind != LineageKind.PROBE]

    def datasets(self) -> Dict[str, DatasetSplit]:
        if self.cfg.experiment == ExperimentKind.TASKREL:
            return experiments.task_zoo_spec(self.cfg).datasets()
        if self.cfg.experiment == ExperimentKind.IPDETECT:
            return experiments.ip_zoo_spec(self.cfg).datasets()
        if self.cfg.experiment == ExperimentKind.UNLEARN:
            return experiments.unlearn_zoo_spec(self.cfg).datasets()
        return {}

    def distances(self) -> DistanceMatrix:
        ids, values, _ = decode_matrix(self.require(self.layout.distances).read_text())
        refset = self.refset()
        return DistanceMatrix(ids, values, Metric.parse(self.cfg.distance.metric), refset.refset_hash, refset.count)


# ==================== Subcommands ====================

def cmd_zoo(stage: Stage, args) -> None:
    zoo, _ = experiments.build_zoo(stage.cfg)
    checkpoints = {}
    for model_id, model in zoo.models.items():
        checkpoints[model_id] = stage.written(save_model(stage.layout.checkpoint(model_id), model, stage.hash),
                                              ArtifactKind.CHECKPOINT, model_id)
    stage.written(save_text(stage.layout.manifest, encode_manifest(zoo.manifest, stage.hash)), ArtifactKind.MANIFEST)
    stage.registry.record_models(stage.run_id, zoo.manifest, checkpoints)


def cmd_sample_refs(stage: Stage, args) -> None:
    cfg = stage.cfg
    if cfg.experiment == ExperimentKind.FINGERPRINT_ONLY:
        if cfg.sampler.refset_file is None:
            raise ConfigError("fingerprint-only runs take their reference points from sampler.refset_file")
        refset, _ = load_refset(cfg.sampler.refset_file)
    else:
        manifest = stage.manifest()
        refset = experiments.make_refset(cfg, stage.datasets(), stage.probe(manifest))
    stage.written(save_refset(stage.layout.refset, refset, stage.hash), ArtifactKind.REFSET)


def cmd_fingerprint(stage: Stage, args) -> None:
    manifest = stage.manifest()
    known = stage.compared_ids(manifest)
    ids = list(args.models) or known
    unknown = [i for i in ids if i not in manifest.ids()]
    if unknown:
        raise ConfigError(f"unknown model ids: {', '.join(unknown)}")
    refset = stage.refset()
    models = {model_id: stage.model(model_id) for model_id in ids}
    for fp in experiments.fingerprint_zoo(models, ids, refset, stage.cfg):
        stage.written(save_fingerprint(stage.layout.fingerprint(fp.model_id), fp, stage.hash),
                      ArtifactKind.FINGERPRINT, fp.model_id)


def cmd_distances(stage: Stage, args) -> None:
    manifest = stage.manifest()
    refset = stage.refset()
    fps = [load_fingerprint(stage.require(stage.layout.fingerprint(model_id)), model_id, refset)[0]
           for model_id in stage.compared_ids(manifest)]
    dm = distance_matrix(fps, stage.cfg.distance.metric, stage.cfg.jobs)
    stage.written(save_text(stage.layout.distances, encode_matrix(dm.ids, dm.values, stage.hash)),
                  ArtifactKind.DISTANCES)
    affinity = to_affinity(dm)
    stage.written(save_text(stage.layout.affinity, encode_matrix(affinity.ids, affinity.values, stage.hash)),
                  ArtifactKind.AFFINITY)


def _report(stage: Stage, name: str, text: str, kind: ArtifactKind = ArtifactKind.REPORT) -> None:
    stage.written(save_text(stage.layout.report(name), text), kind)


def cmd_report(stage: Stage, args) -> None:
    cfg = stage.cfg
    dm = stage.distances()
    header = f"# config_hash={format_hash(stage.hash)}\n"
    if cfg.experiment == ExperimentKind.TASKREL:
        result = experiments.task_relatedness(dm, experiments.task_zoo_spec(cfg).ground_truth_angles())
        _report(stage, "similarity_tree.nwk", result.dendrogram.to_newick() + "\n", ArtifactKind.DENDROGRAM)
        _report(stage, "similarity_tree.dot", result.dendrogram.to_dot(), ArtifactKind.DENDROGRAM)
        _report(stage, "taskrel.txt", header + f"spearman={result.spearman:.9g}\n")
        if cfg.sweep.refs:
            manifest = stage.manifest()
            ids = stage.compared_ids(manifest)
            rows = experiments.sweep(cfg, {i: stage.model(i) for i in ids}, ids, stage.datasets(),
                                     stage.probe(manifest))
            _report(stage, "refcount_sweep.csv", encode_rows(["sampler", "refs", "spearman"], rows, stage.hash))
    elif cfg.experiment == ExperimentKind.IPDETECT:
        report = experiments.ip_detection(dm, stage.manifest())
        _report(stage, "detection.txt", header + f"victim={report.victim_id}\n" + report.table())
        _report(stage, "roc.csv", encode_roc(report.roc, stage.hash))
        _report(stage, "scores.csv", encode_rows(["model", "kind", "score"],
                                                 [(s.model_id, s.kind, s.score) for s in report.suspects],
                                                 stage.hash))
    elif cfg.experiment == ExperimentKind.UNLEARN:
        report = experiments.unlearning(dm)
        _report(stage, "unlearning.txt", header + report.summary())
        rows = [(epoch, d, report.d_unrelated, report.d_exact)
                for epoch, d in enumerate(report.approx_series, start=1)]
        _report(stage, "unlearning.csv", encode_rows(["epoch", "d_ref_approx", "d_ref_unrelated", "d_ref_exact"],
                                                     rows, stage.hash))
    else:
        dendrogram = cluster(to_affinity(dm))
        _report(stage, "similarity_tree.nwk", dendrogram.to_newick() + "\n", ArtifactKind.DENDROGRAM)
        _report(stage, "similarity_tree.dot", dendrogram.to_dot(), ArtifactKind.DENDROGRAM)


COMMANDS = {
    "zoo": cmd_zoo,
    "sample-refs": cmd_sample_refs,
    "fingerprint": cmd_fingerprint,
    "distances": cmd_distances,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="key=value run configuration file")
    common.add_argument("--jobs", type=int, help="parallel workers (default: MODELGIF_JOBS)")
    common.add_argument("--seed", type=int, help="overrides seed")
    common.add_argument("--steps", type=int, help="curve steps S (overrides curve.steps)")
    common.add_argument("--refs", type=int, help="reference points K (overrides sampler.refs)")
    common.add_argument("--baseline", choices=("zero", "random"), help="overrides curve.baseline")
    common.add_argument("--log-level", default=None, help="overrides MODELGIF_LOG_LEVEL")

    parser = argparse.ArgumentParser(prog="modelgif", description="Gradient-field model fingerprints")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = commands.add_parser(name, parents=[common])
        if name == "fingerprint":
            sub.add_argument("models", nargs="*", help="model ids (default: every compared model)")
    return parser


def overrides(args) -> Dict[str, object]:
    return {"jobs": args.jobs, "seed": args.seed, "curve.steps": args.steps,
            "sampler.refs": args.refs, "curve.baseline": args.baseline}


@contextmanager
def open_registry():
    init_db()
    db = SessionLocal()
    try:
        yield Registry(db)
    finally:
        db.close()


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        configure_logging(args.log_level.upper())
    else:
        configure_logging()
    try:
        cfg = load_run_config(args.config, overrides(args))
        with open_registry() as registry:
            COMMANDS[args.command](Stage(cfg, registry), args)
    except ModelGifError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Records runs, zoo models and artifact files in the registry database."""

import logging
from pathlib import Path
from typing import Dict, List, Optional

from sqlalchemy.orm import Session

from app.exceptions import IncomparableError
from app.model_zoo import ZooManifest
from app.models import Artifact, ArtifactKind, ExperimentKind, Run, ZooModel
from app.utils import PathLike, file_crc32, format_hash

logger = logging.getLogger(__name__)


class Registry:
    def __init__(self, db: Session):
        self.db = db

    def open_run(self, run_id: str, experiment: ExperimentKind, cfg_hash: int, output_dir: PathLike) -> Run:
        """Creates the run or reopens it; a run never changes its config hash."""
        run = self.db.query(Run).filter(Run.id == run_id).first()
        if run is None:
            run = Run(id=run_id, experiment=experiment, config_hash=format_hash(cfg_hash),
                      output_dir=str(output_dir))
            self.db.add(run)
            self.db.commit()
            self.db.refresh(run)
            logger.info("Registered run %s (%s)", run_id, experiment.value)
        elif run.config_hash != format_hash(cfg_hash):
            raise IncomparableError(f"run {run_id} was created with config hash {run.config_hash}, "
                                    f"not {format_hash(cfg_hash)}", (run_id,))
        return run

    def record_models(self, run_id: str, manifest: ZooManifest, checkpoints: Dict[str, PathLike]) -> None:
        self.db.query(ZooModel).filter(ZooModel.run_id == run_id).delete()
        for entry in manifest:
            path = checkpoints.get(entry.model_id)
            self.db.add(ZooModel(run_id=run_id, model_id=entry.model_id, kind=entry.kind.value,
                                 parent_id=entry.parent_id, seed=str(entry.seed),
                                 config_hash=format_hash(entry.config_hash),
                                 checkpoint_path=str(path) if path is not None else None))
        self.db.commit()

    def record_artifact(self, run_id: str, kind: ArtifactKind, path: PathLike, cfg_hash: int,
                        model_id: Optional[str] = None) -> Artifact:
        path = Path(path)
        artifact = self.db.query(Artifact).filter(Artifact.run_id == run_id, Artifact.name == path.name).first()
        if artifact is None:
            artifact = Artifact(run_id=run_id, name=path.name)
            self.db.add(artifact)
        artifact.kind = kind
        artifact.model_id = model_id
        artifact.path = str(path)
        artifact.config_hash = format_hash(cfg_hash)
        artifact.crc32 = file_crc32(path)
        self.db.commit()
        self.db.refresh(artifact)
        logger.debug("Registered %s artifact %s", kind.value, path)
        return artifact

    def runs(self) -> List[Run]:
        return self.db.query(Run).order_by(Run.created_at).all()

    def get_run(self, run_id: str) -> Optional[Run]:
        return self.db.query(Run).filter(Run.id == run_id).first()

    def models(self, run_id: str) -> List[ZooModel]:
        return self.db.query(ZooModel).filter(ZooModel.run_id == run_id).order_by(ZooModel.id).all()

    def artifacts(self, run_id: str, kind: Optional[ArtifactKind] = None) -> List[Artifact]:
        query = self.db.query(Artifact).filter(Artifact.run_id == run_id)
        if kind is not None:
            query = query.filter(Artifact.kind == kind)
        return query.order_by(Artifact.id).all()

    def find(self, run_id: str, kind: ArtifactKind, model_id: Optional[str] = None,
             name: Optional[str] = None) -> Optional[Artifact]:
        query = self.db.query(Artifact).filter(Artifact.run_id == run_id, Artifact.kind == kind)
        if model_id is not None:
            query = query.filter(Artifact.model_id == model_id)
        if name is not None:
            query = query.filter(Artifact.name == name)
        return query.first()

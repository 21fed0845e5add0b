from typing import List
from fastapi import APIRouter, Depends
from app.models import ArtifactKind
from app.registry import Registry
from app.routers.runs import get_registry, run_or_404
from app.schemas import ArtifactResponse

router = APIRouter(prefix="/runs", tags=["Fingerprints"])


@router.get("/{run_id}/fingerprints", response_model=List[ArtifactResponse])
def list_fingerprints(run_id: str, registry: Registry = Depends(get_registry)):
    run_or_404(registry, run_id)
    return registry.artifacts(run_id, ArtifactKind.FINGERPRINT)

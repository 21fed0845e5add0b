from pathlib import Path
from fastapi import APIRouter, Depends, HTTPException, status
from fastapi.responses import PlainTextResponse
from app.models import ArtifactKind
from app.registry import Registry
from app.routers.runs import get_registry, run_or_404

router = APIRouter(prefix="/runs", tags=["Reports"])

REPORT_KINDS = (ArtifactKind.REPORT, ArtifactKind.DENDROGRAM, ArtifactKind.DISTANCES, ArtifactKind.AFFINITY)


@router.get("/{run_id}/reports/{name}", response_class=PlainTextResponse)
def get_report(run_id: str, name: str, registry: Registry = Depends(get_registry)):
    run_or_404(registry, run_id)
    for kind in REPORT_KINDS:
        artifact = registry.find(run_id, kind, name=name)
        if artifact and Path(artifact.path).exists():
            return PlainTextResponse(Path(artifact.path).read_text())
    raise HTTPException(
        status_code=status.HTTP_404_NOT_FOUND,
        detail=f"Report {name} not found in run {run_id}"
    )

from pathlib import Path
from typing import Dict
from fastapi import APIRouter, Depends, HTTPException, status
from app.distance import Metric, model_distance
from app.exceptions import ArtifactFormatError, IncomparableError, RejectedInputError, UnsupportedMetricError
from app.formats import load_fingerprint, load_refset
from app.gif_engine import GiFCurveSet
from app.models import ArtifactKind
from app.reference_sampler import ReferenceSet
from app.registry import Registry
from app.routers.runs import get_registry, run_or_404
from app.schemas import DistanceRequest, DistanceResponse

router = APIRouter(prefix="/distances", tags=["Distances"])


def _load(registry: Registry, run_id: str, model_id: str) -> GiFCurveSet:
    artifact = registry.find(run_id, ArtifactKind.FINGERPRINT, model_id=model_id)
    if not artifact or not Path(artifact.path).exists():
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"No fingerprint for {model_id} in run {run_id}"
        )
    fingerprint, _ = load_fingerprint(artifact.path, model_id)
    return fingerprint


def _refsets(registry: Registry, run_id: str) -> Dict[int, ReferenceSet]:
    refsets = {}
    for artifact in registry.artifacts(run_id, ArtifactKind.REFSET):
        if Path(artifact.path).exists():
            refset, _ = load_refset(artifact.path)
            refsets[refset.refset_hash] = refset
    return refsets


def _with_endpoints(fingerprint: GiFCurveSet, refsets: Dict[int, ReferenceSet], run_id: str) -> GiFCurveSet:
    refset = refsets.get(fingerprint.refset_hash)
    if refset is None:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail=f"ig-cosine needs the reference set of {fingerprint.model_id}; none is registered in run {run_id}"
        )
    return fingerprint.attach(refset)


@router.post("/", response_model=DistanceResponse)
def compare_fingerprints(request: DistanceRequest, registry: Registry = Depends(get_registry)):
    run_or_404(registry, request.run_id)
    try:
        metric = Metric.parse(request.metric)
        first = _load(registry, request.run_id, request.first)
        second = _load(registry, request.run_id, request.second)
        if metric == Metric.IG_COSINE:
            refsets = _refsets(registry, request.run_id)
            first = _with_endpoints(first, refsets, request.run_id)
            second = _with_endpoints(second, refsets, request.run_id)
        distance = model_distance(first, second, metric)
    except IncomparableError as exc:
        raise HTTPException(status_code=status.HTTP_409_CONFLICT, detail=str(exc))
    except (RejectedInputError, UnsupportedMetricError, ArtifactFormatError) as exc:
        raise HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc))
    return DistanceResponse(
        first=request.first,
        second=request.second,
        metric=metric.value,
        distance=distance,
        affinity=1.0 - distance / (2.0 * first.count),
        curves=first.count,
    )

from typing import List
from fastapi import APIRouter, Depends, HTTPException, status
from sqlalchemy.orm import Session
from app.database import get_db
from app.registry import Registry
from app.schemas import RunResponse, ZooModelResponse

router = APIRouter(prefix="/runs", tags=["Runs"])


def get_registry(db: Session = Depends(get_db)) -> Registry:
    return Registry(db)


def run_or_404(registry: Registry, run_id: str):
    run = registry.get_run(run_id)
    if not run:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"Run {run_id} not found"
        )
    return run


@router.get("/", response_model=List[RunResponse])
def list_runs(registry: Registry = Depends(get_registry)):
    return registry.runs()


@router.get("/{run_id}", response_model=RunResponse)
def get_run(run_id: str, registry: Registry = Depends(get_registry)):
    return run_or_404(registry, run_id)


@router.get("/{run_id}/models", response_model=List[ZooModelResponse])
def list_models(run_id: str, registry: Registry = Depends(get_registry)):
    run_or_404(registry, run_id)
    return registry.models(run_id)

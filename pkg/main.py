from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from app.config import FORMAT_VERSION, configure_logging
from app.database import init_db
from app.routers import runs, fingerprints, distances, reports
from app.schemas import HealthResponse

configure_logging()
init_db()

app = FastAPI(
    title="ModelGiF Registry",
    description="Read access to zoo runs, gradient-field fingerprints, distances and reports",
    version="1.0.0",
    openapi_url="/openapi.json",
    docs_url="/docs",
    redoc_url="/redoc"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(runs.router)
app.include_router(fingerprints.router)
app.include_router(distances.router)
app.include_router(reports.router)


@app.get("/")
def root():
    return {
        "message": "ModelGiF Registry",
        "version": "1.0.0",
        "endpoints": {
            "health": "/health",
            "runs": "/runs",
            "distances": "/distances",
            "docs": "/docs"
        }
    }


@app.get("/health", response_model=HealthResponse)
def health():
    return HealthResponse(format_version=FORMAT_VERSION)

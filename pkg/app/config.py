import logging
import os
from dotenv import load_dotenv

load_dotenv()


DATABASE_URL = os.getenv("DATABASE_URL", "sqlite:///./modelgif.db")

ARTIFACT_ROOT = os.getenv("MODELGIF_ARTIFACT_ROOT", "./runs")
LOG_LEVEL = os.getenv("MODELGIF_LOG_LEVEL", "INFO").upper()
DEFAULT_JOBS = int(os.getenv("MODELGIF_JOBS", "1"))
if DEFAULT_JOBS < 1:
    raise ValueError("MODELGIF_JOBS must be a positive integer")

FORMAT_VERSION = 1

# Curves
DEFAULT_STEPS = 64
DEFAULT_REFS = 1000
COSINE_EPS = 1e-12

# Completeness tolerances (fraction of |M(x1) - M(x0)|)
TANH_RESIDUAL_TOLERANCE = 0.01
RELU_RESIDUAL_TOLERANCE = 0.05
RESIDUAL_NOISE_FLOOR = 1e-6

# Reference sampling
CUTMIX_AREA_RANGE = (0.25, 0.75)
DEFAULT_PGD_STEPS = 10
DEFAULT_PGD_ALPHA = 0.01
DEFAULT_PGD_EPS = 0.05

# Unlearning protocol
FORGET_SET_SIZE = 128

# Exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_INCOMPARABLE = 3
EXIT_TRAINING_FAILURE = 4

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"


def configure_logging(level: str = LOG_LEVEL) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, datefmt="%H:%M:%S")
    logging.getLogger().setLevel(level)

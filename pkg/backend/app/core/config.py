"""
Runtime defaults, read from the environment (and a .env file if present)
"""
import os
from dotenv import load_dotenv

load_dotenv()


def _env_bool(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in {"1", "true", "yes", "on"}


# Quantization and selection
DEFAULT_LEVELS = int(os.getenv("BANDSEL_LEVELS", 256))
DEFAULT_STAGE1_KEEP = int(os.getenv("BANDSEL_STAGE1_KEEP", 100))
DEFAULT_TARGET_BANDS = int(os.getenv("BANDSEL_TARGET_BANDS", 80))
DEFAULT_SEED = int(os.getenv("BANDSEL_SEED", 0))
DEFAULT_TRAIN_FRACTION = float(os.getenv("BANDSEL_TRAIN_FRACTION", 0.5))
DEFAULT_THRESHOLDS = (-0.02, -0.005, -0.0035, 0.0)

# Ground truth labels above this are rejected (Indian Pines: 1..16)
MAX_LABEL = int(os.getenv("BANDSEL_MAX_LABEL", 16))

# SVM
DEFAULT_SVM_C = float(os.getenv("BANDSEL_SVM_C", 100.0))
DEFAULT_SVM_GAMMA = float(os.getenv("BANDSEL_SVM_GAMMA", 0.5))
DEFAULT_SVM_TOL = float(os.getenv("BANDSEL_SVM_TOL", 1e-3))
DEFAULT_SVM_MAX_PASSES = int(os.getenv("BANDSEL_SVM_MAX_PASSES", 5))
DEFAULT_SVM_MAX_ITER = int(os.getenv("BANDSEL_SVM_MAX_ITER", 200))
DEFAULT_N_JOBS = int(os.getenv("BANDSEL_N_JOBS", 1))

# Experiments
DEFAULT_REPEATS = int(os.getenv("BANDSEL_REPEATS", 5))
DEFAULT_BAND_COUNTS = (2, 3, 4, 12, 14, 18, 20, 25, 35, 36, 40, 45, 50, 53, 60, 70, 75, 80)
OUT_DIR = os.getenv("BANDSEL_OUT_DIR", "results")

# Run store and workers
DATABASE_URL = os.getenv("BANDSEL_DATABASE_URL", "sqlite:///./bandsel_runs.db")
REDIS_URL = os.getenv("BANDSEL_REDIS_URL", "redis://localhost:6379/0")
CELERY_EAGER = _env_bool("BANDSEL_CELERY_EAGER", False)

LOG_LEVEL = os.getenv("BANDSEL_LOG_LEVEL", "INFO")

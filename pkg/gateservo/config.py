# gateservo/config.py
# Single source of truth for all env-driven configuration.
# Import from here; never os.getenv() scattered across modules.
#
# Physical constants are NOT read from the environment: they live on the
# pydantic models (CameraModel, IbvsConfig, ...) so every run is fully
# described by its scenario file.

import os

from dotenv import load_dotenv

load_dotenv()

# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------
LOG_LEVELS: dict[str, str] = {"error": "ERROR", "info": "INFO", "debug": "DEBUG"}
LOG_LEVEL: str = os.getenv("GATESERVO_LOG", "info").strip().lower()
LOG_FORMAT: str = "%(levelname)s %(name)s %(message)s"

# ---------------------------------------------------------------------------
# Outputs + batch execution
# ---------------------------------------------------------------------------
OUT_DIR: str = os.getenv("GATESERVO_OUT_DIR", "runs")
BATCH_WORKERS: int = int(os.getenv("GATESERVO_WORKERS", "4"))

# ---------------------------------------------------------------------------
# HTTP surface
# ---------------------------------------------------------------------------
# Max number of run results kept in memory (runs are deterministic per seed)
RUN_CACHE_SIZE: int = int(os.getenv("GATESERVO_CACHE_SIZE", "64"))

# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------
SCHEMA_VERSION: str = "gateservo/1"


def log_level_name(value: str | None = None) -> str:
    """Map a GATESERVO_LOG value to a logging level name (unknown → INFO)."""
    return LOG_LEVELS.get((value or LOG_LEVEL).strip().lower(), "INFO")

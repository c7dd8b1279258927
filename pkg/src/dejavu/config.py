from __future__ import annotations
import os
from pathlib import Path

from dotenv import load_dotenv

# .env next to the repo root, then the working directory; real env always wins
_ROOT = Path(__file__).resolve().parents[2]
load_dotenv(_ROOT / ".env")
load_dotenv()


def _f(v: str, d: float) -> float:
    try:
        return float(os.environ.get(v, d))
    except Exception:
        return float(d)


def _i(v: str, d: int) -> int:
    try:
        return int(os.environ.get(v, d))
    except Exception:
        return int(d)


def _b(v: str, d="0") -> bool:
    return os.environ.get(v, d) in ("1", "true", "TRUE", "yes", "Yes")


# --- runtime config (env overrides) ---
JOBS = max(1, _i("DEJAVU_JOBS", 1))
LOG_LEVEL = os.environ.get("DEJAVU_LOG_LEVEL", "INFO").upper()
QUEUE_SIZE = max(1, _i("DEJAVU_QUEUE_SIZE", 10))
SLOP_NS = max(0, _i("DEJAVU_SLOP_NS", 40_000_000))     # 40 ms, < half a 10 Hz period
WEBHOOK = os.environ.get("DEJAVU_WEBHOOK", "")
TZ_NAME = os.environ.get("DEJAVU_TZ", "UTC")
NOTIFY_ON_RUN = _b("DEJAVU_NOTIFY_ON_RUN", "0")

# perception / metrics defaults (metres)
GATE_M = _f("DEJAVU_GATE_M", 2.0)
GATE_TRACK_M = _f("DEJAVU_GATE_TRACK_M", 3.0)
MAX_MISSES = _i("DEJAVU_MAX_MISSES", 2)
SIGMA_CAM_M = _f("DEJAVU_SIGMA_CAM_M", 0.3)
MATCH_RADIUS_M = _f("DEJAVU_MATCH_RADIUS_M", 2.0)

# replay prediction
EMA_ALPHA = _f("DEJAVU_EMA_ALPHA", 0.2)
REPLAY_LEAD_NS = _i("DEJAVU_REPLAY_LEAD_NS", 5_000_000)

TRACE_SCHEMA_VERSION = 1

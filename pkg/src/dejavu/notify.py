from __future__ import annotations
import logging
from datetime import datetime
from typing import Dict, List, Optional

import pytz
import requests

from dejavu import config

log = logging.getLogger(__name__)


# ---------- webhook posting ----------
def _default_post(msg: str) -> None:
    url = config.WEBHOOK
    if not url:
        return
    try:
        requests.post(url, json={"content": msg[:1900]}, timeout=8).raise_for_status()
    except Exception as e:
        # a summary must never fail the run it summarises
        log.warning("webhook post failed: %s", e)


post_message = _default_post


# ---------- time helpers ----------
def _tz():
    try:
        return pytz.timezone(config.TZ_NAME)
    except pytz.UnknownTimeZoneError:
        return pytz.utc


def _stamp(when: Optional[datetime] = None) -> str:
    dt = when or datetime.now(pytz.utc)
    if dt.tzinfo is None:
        dt = pytz.utc.localize(dt)
    return dt.astimezone(_tz()).strftime("%Y-%m-%d %H:%M:%S %Z")


def _num(v: str) -> str:
    return v if v else "—"


# ---------- summaries ----------
def format_run(row: Dict[str, str], when: Optional[datetime] = None) -> str:
    # 🧪 DEJAVU RUN crossing_pedestrian (2026-01-01 10:00:00 UTC) uni constant cam=0 lidar=1 | recall 0.9 | mota 0.8 | idsw 0
    return (
        f"🧪 DEJAVU RUN {row['scenario']} ({_stamp(when)}) {row['mode']} {row['delay_kind']} "
        f"cam={row['k_cam']} lidar={row['k_lidar']} | offset {_num(row['mean_abs_offset'])} | "
        f"P {_num(row['precision'])} R {_num(row['recall'])} F1 {_num(row['f1'])} | "
        f"mota {_num(row['mota'])} | idsw {row['idsw']}"
    )


def format_sweep(rows: List[Dict[str, str]], metric: str = "recall", when: Optional[datetime] = None) -> str:
    # 📊 DEJAVU SWEEP crossing_pedestrian (…) 36 cells recall min 0.8 @ cam=0 lidar=5 max 1.0 @ cam=0 lidar=0
    if not rows:
        return f"📊 DEJAVU SWEEP ({_stamp(when)}) no cells"
    scored = [r for r in rows if r.get(metric)]
    head = f"📊 DEJAVU SWEEP {rows[0]['scenario']} ({_stamp(when)}) {len(rows)} cells"
    if not scored:
        return f"{head} {metric} undefined"
    lo = min(scored, key=lambda r: float(r[metric]))
    hi = max(scored, key=lambda r: float(r[metric]))
    return (f"{head} {metric} min {lo[metric]} @ cam={lo['k_cam']} lidar={lo['k_lidar']} "
            f"max {hi[metric]} @ cam={hi['k_cam']} lidar={hi['k_lidar']}")


def post_run_summary(row: Dict[str, str], when: Optional[datetime] = None) -> None:
    post_message(format_run(row, when))


def post_sweep_summary(rows: List[Dict[str, str]], metric: str = "recall",
                       when: Optional[datetime] = None) -> None:
    post_message(format_sweep(rows, metric, when))

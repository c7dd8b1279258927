from __future__ import annotations
import csv
import io
import json
import os
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional

from dejavu import config
from dejavu.harness import RunResult, SweepCell, SweepSpec
from dejavu.metrics import MetricsReport
from dejavu.pipeline import Modality
from dejavu.scenario import Scenario

REPORT_HEADER = ["scenario", "k_cam", "k_lidar", "delay_kind", "mode",
                 "mean_abs_offset", "precision", "recall", "f1", "mota", "idsw"]


def trace_line(record: Dict[str, Any]) -> str:
    rec = dict(record)
    rec["schema"] = config.TRACE_SCHEMA_VERSION
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def trace_text(records: Iterable[Dict[str, Any]]) -> str:
    return "".join(trace_line(r) + "\n" for r in records)


def read_trace(path: str) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".part"
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_trace(path: str, result: RunResult) -> None:
    _atomic_write(path, trace_text(result.records))


# ----- CSV report -----

def _fmt(x: Optional[Fraction]) -> str:
    return "" if x is None else f"{float(x):.6f}"


def report_row(name: str, k_cam: int, k_lidar: int, delay_kind: str, mode: str,
               report: MetricsReport) -> Dict[str, str]:
    return {
        "scenario": name,
        "k_cam": str(k_cam),
        "k_lidar": str(k_lidar),
        "delay_kind": delay_kind,
        "mode": mode,
        "mean_abs_offset": _fmt(report.mean_abs_offset),
        "precision": _fmt(report.precision),
        "recall": _fmt(report.recall),
        "f1": _fmt(report.f1),
        "mota": _fmt(report.mota),
        "idsw": str(report.idsw),
    }


def run_row(sc: Scenario, report: MetricsReport) -> Dict[str, str]:
    at = sc.attack
    if at is None:
        return report_row(sc.name, 0, 0, "none", "benign", report)
    cam = sc.by_modality(Modality.CAMERA).stream.index
    lid = sc.by_modality(Modality.LIDAR).stream.index
    k_cam = at.delay.k_for(cam) if cam in at.targets else 0
    k_lidar = at.delay.k_for(lid) if lid in at.targets else 0
    return report_row(sc.name, k_cam, k_lidar, at.delay.kind.value, "uni" if at.is_uni else "mul", report)


def sweep_rows(base: Scenario, spec: SweepSpec, cells: Iterable[SweepCell]) -> List[Dict[str, str]]:
    return [report_row(base.name, c.k_cam, c.k_lidar, spec.delay.value, spec.mode, c.report) for c in cells]


def report_text(rows: Iterable[Dict[str, str]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_HEADER, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write_report(path: str, rows: Iterable[Dict[str, str]]) -> None:
    _atomic_write(path, report_text(rows))


def read_report(path: str) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames != REPORT_HEADER:
            raise ValueError(f"{path}: unexpected header {r.fieldnames}")
        return list(r)

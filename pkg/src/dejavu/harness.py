from __future__ import annotations
import copy
import enum
import heapq
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Set, Tuple

from dejavu import config
from dejavu.adversary import AttackPlan, Capability, DelayKind, apply_attack
from dejavu.metrics import (
    DetectionTotals,
    MetricsReport,
    TrackingEvalState,
    class_totals,
    match_frame,
    mean_abs_offset,
    pairing_stats,
)
from dejavu.perception import ModalitySnapshot, PerceptionOutput, Tracker, fuse, render_snapshot
from dejavu.pipeline import Modality, SensorPacket, StreamId, capture_schedule, stamp_and_publish, transmit
from dejavu.scenario import Scenario, ScenarioError, from_dict
from dejavu.synchronizer import AlignedTuple, ApproxTimeSynchronizer
from dejavu.timebase import TimePoint, derive_seed

log = logging.getLogger(__name__)


class EventKind(enum.IntEnum):
    CAPTURE = 0
    FORGE_DELIVER = 1
    DELIVER = 2


@dataclass(frozen=True, order=True)
class Event:
    time: TimePoint
    stream: int
    seq: int
    kind: EventKind
    packet: Optional[SensorPacket] = field(default=None, compare=False)

    @property
    def key(self) -> Tuple[int, int, int, int]:
        return (self.time, self.stream, self.seq, int(self.kind))


@dataclass
class RunResult:
    scenario: Scenario
    records: List[Dict[str, Any]]
    report: MetricsReport
    tuples: List[AlignedTuple]
    outputs: List[PerceptionOutput] = field(default_factory=list)

    def records_of(self, kind: str) -> List[Dict[str, Any]]:
        return [r for r in self.records if r["kind"] == kind]


def _xy(p) -> List[float]:
    return [round(p[0], 6), round(p[1], 6)]


class _Engine:
    """One scenario run: capture -> attack -> transmit -> push -> fuse -> track -> score."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.specs = {s.stream.index: s for s in sc.streams}
        self.ids: Dict[int, StreamId] = {s.stream.index: s.stream for s in sc.streams}
        self.channels = {i: s.make_channel() for i, s in self.specs.items()}
        self.captures = {i: capture_schedule(s.stream, s.period, s.phase, sc.horizon) for i, s in self.specs.items()}
        self.plan: AttackPlan = apply_attack(
            sc.attack,
            list(self.ids.values()),
            {i: s.period for i, s in self.specs.items()},
            {i: s.make_clock() for i, s in self.specs.items()},
            alpha=config.EMA_ALPHA,
        )
        self.sync = ApproxTimeSynchronizer(list(self.ids.values()), sc.sync,
                                           frame_index=self._frame_index, on_note=self._note)
        self.tracker = Tracker(sc.perception.gate_track, sc.perception.max_misses)
        self.lidar_fov = sc.perception.fov_for(Modality.LIDAR)

        self.tracking = TrackingEvalState()
        self.detection = DetectionTotals()
        self.per_class = {c: DetectionTotals() for c in sorted(sc.world.classes(), key=lambda c: c.value)}
        self.frames = []
        self.tuples: List[AlignedTuple] = []
        self.outputs: List[PerceptionOutput] = []
        self.records: List[Dict[str, Any]] = []

        self.now: TimePoint = 0
        self._heap: List[Event] = []
        self._keys: Set[Tuple[int, int, int, int]] = set()
        self._snapshots: Dict[Tuple[int, int], ModalitySnapshot] = {}
        self._last_tracked: Optional[TimePoint] = None

    # ----- bookkeeping -----

    def _note(self, text: str, fields: Dict[str, Any]) -> None:
        log.debug("t=%d %s %s", self.now, text, fields)
        self.records.append({"kind": "note", "t": self.now, "text": text, "fields": dict(fields)})

    def _schedule(self, ev: Event) -> None:
        if ev.key in self._keys:
            raise RuntimeError(f"event order is not total: duplicate key {ev.key}")
        self._keys.add(ev.key)
        heapq.heappush(self._heap, ev)

    def _frame_index(self, stream: StreamId, t_sys: TimePoint) -> int:
        s = self.specs[stream.index]
        n = max(0, (t_sys - s.phase) // s.period)
        return min(n, len(self.captures[stream.index]) - 1)

    def _record_packet(self, packet: SensorPacket, sent: TimePoint, arrival: TimePoint) -> None:
        self.records.append({
            "kind": "packet",
            "stream": packet.stream.label(),
            "seq": packet.seq,
            "t_act": packet.t_act,
            "t_pre": packet.t_pre,
            "payload": packet.payload,
            "forged": packet.forged,
            "sent": sent,
            "arrival": arrival,
        })

    def _snapshot(self, packet: SensorPacket) -> ModalitySnapshot:
        key = (packet.stream.index, packet.t_act)
        snap = self._snapshots.get(key)
        if snap is None:
            snap = render_snapshot(self.sc.world, packet.stream, packet.t_act, self.sc.perception)
            self._snapshots[key] = snap
        return snap

    # ----- handlers -----

    def _on_capture(self, ev: Event) -> None:
        stream = self.ids[ev.stream]
        packet = stamp_and_publish(stream, ev.seq, ev.time, self.plan.clock_for(ev.stream, ev.time))
        sa = self.plan.for_stream(ev.stream)
        if sa is not None:
            packet = sa.tamper(packet, self._note)
        arrival = transmit(self.channels[ev.stream], packet, ev.time)
        self._record_packet(packet, ev.time, arrival)
        self._schedule(Event(arrival, ev.stream, ev.seq, EventKind.DELIVER, packet))

    def _on_deliver(self, ev: Event) -> None:
        if ev.kind == EventKind.FORGE_DELIVER:
            self._record_packet(ev.packet, ev.time, ev.time)
        for tup in self.sync.push(ev.packet, ev.time):
            self._on_tuple(tup)
        if ev.kind != EventKind.DELIVER:
            return
        sa = self.plan.for_stream(ev.stream)
        if sa is None or sa.replay is None:
            return
        sa.replay.observe(ev.packet, ev.time)
        if not sa.replay.estimable:
            self._note("replay cold start", {"stream": ev.stream, "seq": ev.packet.seq})
            return
        planned = sa.replay.plan(ev.time, self._note)
        if planned is not None:
            send_at, forged = planned
            self._schedule(Event(send_at, ev.stream, forged.seq, EventKind.FORGE_DELIVER, forged))

    def _on_tuple(self, tup: AlignedTuple) -> None:
        sc = self.sc
        self.tuples.append(tup)
        self.records.append({
            "kind": "tuple",
            "t_sys": tup.t_sys,
            "pivot": tup.pivot,
            "spread": tup.spread,
            "members": [{"stream": p.stream.label(), "seq": p.seq, "t_pre": p.t_pre,
                         "payload": p.payload, "forged": p.forged} for p in tup.members],
            "offsets": {self.ids[i].label(): off for i, off in sorted(tup.content_offsets.items())},
        })

        snaps = {p.stream.index: self._snapshot(p) for p in tup.members}
        out = fuse(tup, snaps, sc.perception.mode, sc.perception.gate)
        gt = sc.world.alive_at(tup.t_sys, self.lidar_fov)

        res = match_frame([d.position for d in out.detections], gt, sc.match_radius, tup.t_sys)
        self.detection.add(res)
        self.frames.append(res)
        class_totals(out.detections, gt, sc.match_radius, self.per_class)
        self.records.append({
            "kind": "detection",
            "t_sys": tup.t_sys,
            "tp": res.tp,
            "fp": res.fp,
            "fn": res.fn,
            "phantoms": res.fp,
            "fn_oids": list(res.missed),
            "gt_oids": [g[0] for g in gt],
            "camera_oids": list(out.camera_oids),
            "lidar_oids": list(out.lidar_oids),
            "detections": [_xy(d.position) + [d.cls.value if d.cls else None] for d in out.detections],
        })

        if self._last_tracked is not None and tup.t_sys <= self._last_tracked:
            self.outputs.append(out)
            self._note("tuple not tracked", {"t_sys": tup.t_sys, "reason": "same emission time"})
            return
        out = replace(out, tracks=tuple(self.tracker.update(out.detections, tup.t_sys)))
        self.outputs.append(out)
        self._last_tracked = tup.t_sys
        self.tracking.update(out.tracks, gt, sc.match_radius, tup.t_sys)
        self.records.append({
            "kind": "track",
            "t_sys": tup.t_sys,
            "tracks": [[t.tid] + _xy(t.position) for t in out.tracks],
            "idsw": self.tracking.idsw,
        })

    # ----- main loop -----

    def execute(self) -> RunResult:
        sc = self.sc
        self._note("run start", {"scenario": sc.name, "seed": sc.seed,
                                 "attack": sc.attack.capability.value if sc.attack else "none"})
        for idx, times in sorted(self.captures.items()):
            for seq, t in enumerate(times):
                self._schedule(Event(t, idx, seq, EventKind.CAPTURE))

        while self._heap:
            ev = heapq.heappop(self._heap)
            self.now = ev.time
            if ev.kind == EventKind.CAPTURE:
                self._on_capture(ev)
            else:
                self._on_deliver(ev)

        hist = pairing_stats(self.tuples)
        report = MetricsReport(
            pairing=hist,
            mean_abs_offset=mean_abs_offset(hist),
            detection=self.detection,
            tracking=self.tracking,
            per_class=self.per_class,
            frames=self.frames,
        )
        report.check()
        self._note("run summary", {
            "tuples": len(self.tuples),
            "tp": self.detection.tp, "fp": self.detection.fp, "fn": self.detection.fn,
            "idsw": self.tracking.idsw, "gt": self.tracking.gt,
            "per_class": {c.value: [t.tp, t.fp, t.fn] for c, t in self.per_class.items()},
        })
        log.info("run %s: %d tuples, recall=%s idsw=%d", sc.name, len(self.tuples),
                 report.recall, report.idsw)
        return RunResult(sc, self.records, report, self.tuples, self.outputs)


def run(scenario: Scenario) -> RunResult:
    """Execute one scenario to its horizon; the same scenario always yields the same records."""
    return _Engine(scenario).execute()


# ----- delay-grid sweeps -----

class SweepTargets(str, enum.Enum):
    CAMERA = "camera"
    LIDAR = "lidar"
    BOTH = "both"


@dataclass(frozen=True)
class SweepSpec:
    targets: SweepTargets = SweepTargets.BOTH
    k_max: int = 5
    delay: DelayKind = DelayKind.CONSTANT

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError(f"k_max must be >= 0, got {self.k_max}")

    @property
    def mode(self) -> str:
        return "mul" if self.targets == SweepTargets.BOTH else "uni"

    def cells(self) -> List[Tuple[int, int]]:
        ks = range(self.k_max + 1)
        if self.targets == SweepTargets.CAMERA:
            return [(k, 0) for k in ks]
        if self.targets == SweepTargets.LIDAR:
            return [(0, k) for k in ks]
        return [(kc, kl) for kc in ks for kl in ks]


@dataclass
class SweepCell:
    k_cam: int
    k_lidar: int
    report: MetricsReport


def cell_doc(base: Scenario, spec: SweepSpec, cell: Tuple[int, int]) -> Dict[str, Any]:
    """Scenario document for one grid cell: stale-content attack on the swept streams."""
    k_cam, k_lidar = cell
    cam = base.by_modality(Modality.CAMERA).stream.label()
    lid = base.by_modality(Modality.LIDAR).stream.label()
    by_target = {SweepTargets.CAMERA: {cam: k_cam}, SweepTargets.LIDAR: {lid: k_lidar},
                 SweepTargets.BOTH: {cam: k_cam, lid: k_lidar}}[spec.targets]
    doc = copy.deepcopy(base.doc)
    doc["seed"] = base.seed
    doc["attack"] = {
        "capability": Capability.TIMESTAMP_FORGE.value,
        "targets": sorted(by_target),
        "delay": {"kind": spec.delay.value, "k": 0, "k_by_stream": by_target},
        "seed": derive_seed(base.seed, k_cam, k_lidar),
    }
    return doc


def _run_cell(job: Tuple[Dict[str, Any], int, int]) -> SweepCell:
    doc, k_cam, k_lidar = job
    return SweepCell(k_cam, k_lidar, run(from_dict(doc)).report)


def sweep(base: Scenario, spec: SweepSpec, jobs: int = 1) -> List[SweepCell]:
    """One run per grid cell, in cell order; cells share nothing, so `jobs` never changes results."""
    if base.attack is not None:
        raise ScenarioError(["attack: sweep needs a benign base scenario"])
    work = [(cell_doc(base, spec, c), c[0], c[1]) for c in spec.cells()]
    log.info("sweep %s: %d cells targets=%s delay=%s jobs=%d", base.name, len(work),
             spec.targets.value, spec.delay.value, jobs)
    if jobs <= 1:
        return [_run_cell(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_run_cell, work))

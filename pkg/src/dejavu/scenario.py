"""Scenario files: JSON documents loaded into immutable run descriptions.

Validation walks the whole document and collects every problem before giving up,
so `dejavu_sim.py validate` can print all of them at once.
"""
from __future__ import annotations
import copy
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from dejavu import config
from dejavu.adversary import AttackSpec, Capability, DelayKind, DelayModel
from dejavu.perception import FieldOfView, FusionMode, ObjectClass, PerceptionParams, World, WorldObject
from dejavu.pipeline import Channel, Modality, StreamId
from dejavu.synchronizer import SyncMode, SyncPolicy
from dejavu.timebase import ClockModel, Duration, derive_seed

log = logging.getLogger(__name__)


class ScenarioError(ValueError):
    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors) or "invalid scenario")


@dataclass(frozen=True)
class StreamSpec:
    stream: StreamId
    period: Duration
    phase: Duration = 0
    clock_offset: Duration = 0
    clock_skew_ppm: Fraction = Fraction(0)
    clock_jitter: Duration = 0
    clock_seed: int = 0
    latency: Duration = 0
    latency_jitter: Duration = 0
    channel_seed: int = 0
    allow_reorder: bool = False

    # fresh objects per run: clocks and channels carry RNG cursors
    def make_clock(self) -> ClockModel:
        return ClockModel(self.clock_offset, self.clock_skew_ppm, self.clock_jitter, self.clock_seed)

    def make_channel(self) -> Channel:
        return Channel(self.latency, self.latency_jitter, self.channel_seed, self.allow_reorder)


@dataclass(frozen=True)
class Scenario:
    name: str
    horizon: Duration
    seed: int
    streams: Tuple[StreamSpec, ...]
    sync: SyncPolicy
    attack: Optional[AttackSpec]
    world: World
    perception: PerceptionParams
    match_radius: float = 2.0
    doc: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def by_modality(self, modality: Modality) -> StreamSpec:
        return next(s for s in self.streams if s.stream.modality == modality)


# ----- document checks -----

class _Checker:
    def __init__(self):
        self.errors: List[str] = []

    def err(self, path: str, msg: str) -> None:
        self.errors.append(f"{path}: {msg}")

    def int_(self, d: Mapping, key: str, path: str, default: Any = None, *, lo: Optional[int] = None,
             lo_strict: bool = False, required: bool = False) -> Optional[int]:
        p = f"{path}{key}"
        if key not in d or d[key] is None:
            if required:
                self.err(p, "is required")
            return default
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.err(p, f"must be an integer, got {v!r}")
            return default
        if lo is not None and (v <= lo if lo_strict else v < lo):
            self.err(p, f"must be {'>' if lo_strict else '>='} {lo}, got {v}")
        return v

    def num(self, d: Mapping, key: str, path: str, default: float, *, positive: bool = False) -> float:
        p = f"{path}{key}"
        v = d.get(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.err(p, f"must be a number, got {v!r}")
            return default
        if positive and v <= 0:
            self.err(p, f"must be > 0, got {v}")
        return float(v)

    def frac(self, d: Mapping, key: str, path: str) -> Fraction:
        v = d.get(key, 0)
        try:
            if isinstance(v, bool):
                raise ValueError
            return Fraction(str(v))
        except (ValueError, ZeroDivisionError):
            self.err(f"{path}{key}", f"must be a rational number, got {v!r}")
            return Fraction(0)

    def bool_(self, d: Mapping, key: str, path: str, default: bool = False) -> bool:
        v = d.get(key, default)
        if not isinstance(v, bool):
            self.err(f"{path}{key}", f"must be true or false, got {v!r}")
            return default
        return v

    def enum(self, d: Mapping, key: str, path: str, cls, default):
        v = d.get(key, default.value)
        try:
            return cls(v)
        except ValueError:
            self.err(f"{path}{key}", f"must be one of {[e.value for e in cls]}, got {v!r}")
            return default

    def section(self, d: Mapping, key: str, path: str, kind=dict):
        v = d.get(key)
        if v is None:
            return kind()
        if not isinstance(v, kind):
            self.err(f"{path}{key}", f"must be a {'list' if kind is list else 'table'}")
            return kind()
        return v


def _resolve_stream(ref: Any, names: Dict[str, int], count: int) -> Optional[int]:
    if isinstance(ref, bool):
        return None
    if isinstance(ref, int):
        return ref if 0 <= ref < count else None
    if isinstance(ref, str):
        if ref in names:
            return names[ref]
        if ref.isdigit() and int(ref) < count:
            return int(ref)
    return None


def _parse(doc: Mapping[str, Any]) -> Tuple[Optional[Scenario], List[str]]:
    c = _Checker()
    if not isinstance(doc, Mapping):
        return None, ["<root>: scenario must be a table"]

    name = doc.get("name", "scenario")
    if not isinstance(name, str) or not name:
        c.err("name", "must be a non-empty string")
        name = "scenario"
    horizon = c.int_(doc, "horizon_ns", "", 0, lo=0, lo_strict=True, required=True)
    seed = c.int_(doc, "seed", "", 0, lo=0)

    # streams
    streams: List[StreamSpec] = []
    names: Dict[str, int] = {}
    raw_streams = c.section(doc, "streams", "", list)
    if not raw_streams:
        c.err("streams", "at least one stream is required")
    for i, s in enumerate(raw_streams):
        p = f"streams[{i}]."
        if not isinstance(s, Mapping):
            c.err(f"streams[{i}]", "must be a table")
            continue
        modality = c.enum(s, "modality", p, Modality, Modality.OTHER)
        sname = s.get("name") or f"{modality.value}{i}"
        if not isinstance(sname, str):
            c.err(f"{p}name", "must be a string")
            sname = f"{modality.value}{i}"
        if sname in names:
            c.err(f"{p}name", f"duplicate stream name {sname!r}")
        names[sname] = i
        period = c.int_(s, "period_ns", p, 0, lo=0, lo_strict=True, required=True)
        phase = c.int_(s, "phase_ns", p, 0, lo=0)
        if period and phase is not None and phase >= period > 0:
            c.err(f"{p}phase_ns", f"must be < period_ns ({period}), got {phase}")
        clk = c.section(s, "clock", p)
        ch = c.section(s, "channel", p)
        streams.append(StreamSpec(
            stream=StreamId(i, modality, sname),
            period=period or 1,
            phase=phase or 0,
            clock_offset=c.int_(clk, "offset_ns", f"{p}clock.", 0),
            clock_skew_ppm=c.frac(clk, "skew_ppm", f"{p}clock."),
            clock_jitter=c.int_(clk, "jitter_ns", f"{p}clock.", 0, lo=0),
            clock_seed=c.int_(clk, "seed", f"{p}clock.", derive_seed(seed, "clock", i), lo=0),
            latency=c.int_(ch, "base_latency_ns", f"{p}channel.", 0, lo=0),
            latency_jitter=c.int_(ch, "jitter_ns", f"{p}channel.", 0, lo=0),
            channel_seed=c.int_(ch, "seed", f"{p}channel.", derive_seed(seed, "channel", i), lo=0),
            allow_reorder=c.bool_(ch, "allow_reorder", f"{p}channel."),
        ))
    mods = [s.stream.modality for s in streams]
    if raw_streams and mods.count(Modality.CAMERA) != 1:
        c.err("streams", "exactly one camera stream is required for fusion")
    if raw_streams and mods.count(Modality.LIDAR) != 1:
        c.err("streams", "exactly one lidar stream is required for fusion")

    # sync
    sy = c.section(doc, "sync", "")
    sync = SyncPolicy(
        mode=c.enum(sy, "mode", "sync.", SyncMode, SyncMode.APPROXIMATE),
        slop=c.int_(sy, "slop_ns", "sync.", config.SLOP_NS, lo=0),
        queue_size=c.int_(sy, "queue_size", "sync.", config.QUEUE_SIZE, lo=1),
    )

    # attack
    attack: Optional[AttackSpec] = None
    at = doc.get("attack")
    if at is not None:
        if not isinstance(at, Mapping):
            c.err("attack", "must be a table")
        else:
            cap = c.enum(at, "capability", "attack.", Capability, Capability.TIMESTAMP_FORGE)
            targets = set()
            raw_targets = c.section(at, "targets", "attack.", list)
            if not raw_targets:
                c.err("attack.targets", "at least one target stream is required")
            for j, ref in enumerate(raw_targets):
                idx = _resolve_stream(ref, names, len(streams))
                if idx is None:
                    c.err(f"attack.targets[{j}]", f"unknown stream {ref!r}")
                else:
                    targets.add(idx)
            dl = c.section(at, "delay", "attack.")
            kind = c.enum(dl, "kind", "attack.delay.", DelayKind, DelayKind.CONSTANT)
            k = c.int_(dl, "k", "attack.delay.", 0, lo=0)
            k_by: Dict[int, int] = {}
            for ref, kv in c.section(dl, "k_by_stream", "attack.delay.").items():
                idx = _resolve_stream(ref, names, len(streams))
                if idx is None:
                    c.err(f"attack.delay.k_by_stream.{ref}", "unknown stream")
                    continue
                if isinstance(kv, bool) or not isinstance(kv, int) or kv < 0:
                    c.err(f"attack.delay.k_by_stream.{ref}", f"must be an integer >= 0, got {kv!r}")
                    continue
                k_by[idx] = kv
            if cap == Capability.CLOCK_DESYNC and kind == DelayKind.UNIFORM:
                c.err("attack.delay.kind", "clock_desync supports constant delay only")
            start = c.int_(at, "start_ns", "attack.", 0)
            stop = c.int_(at, "stop_ns", "attack.", None)
            if stop is not None and start is not None and stop <= start:
                c.err("attack.stop_ns", f"must be > start_ns ({start}), got {stop}")
            attack = AttackSpec(
                targets=frozenset(targets),
                capability=cap,
                delay=DelayModel(kind, k or 0, k_by),
                stamp_offset=c.int_(at, "stamp_offset_ns", "attack.", 0),
                lead=c.int_(at, "lead_ns", "attack.", config.REPLAY_LEAD_NS, lo=0, lo_strict=True),
                history_depth=c.int_(at, "history_depth", "attack.", 1, lo=1),
                start_time=start or 0,
                stop_time=stop,
                inject_skew_ppm=c.frac(at, "inject_skew_ppm", "attack."),
                seed=c.int_(at, "seed", "attack.", derive_seed(seed, "attack"), lo=0),
            )

    # world
    objects: List[WorldObject] = []
    seen_oids = set()
    wd = c.section(doc, "world", "")
    for j, o in enumerate(c.section(wd, "objects", "world.", list)):
        p = f"world.objects[{j}]."
        if not isinstance(o, Mapping):
            c.err(f"world.objects[{j}]", "must be a table")
            continue
        oid = c.int_(o, "oid", p, j + 1)
        if oid in seen_oids:
            c.err(f"{p}oid", f"duplicate oid {oid}")
        seen_oids.add(oid)
        cls = c.enum(o, "class", p, ObjectClass, ObjectClass.CAR)
        extent = c.num(o, "extent", p, 0.5, positive=True)
        wps = []
        for w_i, w in enumerate(c.section(o, "waypoints", p, list)):
            ok = (isinstance(w, (list, tuple)) and len(w) == 3 and isinstance(w[0], int)
                  and not isinstance(w[0], bool) and all(isinstance(x, (int, float)) for x in w[1:]))
            if not ok:
                c.err(f"{p}waypoints[{w_i}]", "must be [t_ns, x_m, y_m]")
                continue
            wps.append((w[0], float(w[1]), float(w[2])))
        if not wps:
            c.err(f"{p}waypoints", "at least one waypoint is required")
            continue
        try:
            objects.append(WorldObject(oid, cls, tuple(wps), extent))
        except ValueError as e:
            c.err(f"{p}waypoints", str(e))

    # perception and metrics
    pc = c.section(doc, "perception", "")
    fov = {}
    for key, f in c.section(pc, "fov", "perception.").items():
        fp = f"perception.fov.{key}."
        try:
            Modality(key)
        except ValueError:
            c.err(f"perception.fov.{key}", "unknown modality")
            continue
        if not isinstance(f, Mapping):
            c.err(f"perception.fov.{key}", "must be a table")
            continue
        fov[key] = FieldOfView(
            heading_deg=c.num(f, "heading_deg", fp, 0.0),
            half_angle_deg=c.num(f, "half_angle_deg", fp, 180.0, positive=True),
            range_m=c.num(f, "range_m", fp, 100.0, positive=True),
        )
    params = PerceptionParams(
        mode=c.enum(pc, "mode", "perception.", FusionMode, FusionMode.LIDAR_DOMINANT),
        gate=c.num(pc, "gate_m", "perception.", config.GATE_M, positive=True),
        gate_track=c.num(pc, "gate_track_m", "perception.", config.GATE_TRACK_M, positive=True),
        max_misses=c.int_(pc, "max_misses", "perception.", config.MAX_MISSES, lo=0),
        sigma_cam=c.num(pc, "sigma_cam_m", "perception.", config.SIGMA_CAM_M),
        fov=fov,
    )
    if params.sigma_cam < 0:
        c.err("perception.sigma_cam_m", "must be >= 0")
    mt = c.section(doc, "metrics", "")
    radius = c.num(mt, "radius_m", "metrics.", config.MATCH_RADIUS_M, positive=True)

    if c.errors:
        return None, c.errors
    sc = Scenario(
        name=name,
        horizon=horizon,
        seed=seed,
        streams=tuple(streams),
        sync=sync,
        attack=attack,
        world=World(tuple(objects), derive_seed(seed, "world")),
        perception=params,
        match_radius=radius,
        doc=copy.deepcopy(dict(doc)),
    )
    return sc, []


def validate(scenario: Union[Scenario, Mapping[str, Any]]) -> List[str]:
    """Every violated field of a scenario document; empty when it is runnable."""
    doc = scenario.doc if isinstance(scenario, Scenario) else scenario
    return _parse(doc)[1]


def with_seed(doc: Any, seed: Optional[int]) -> Any:
    """Copy of ``doc`` with its seed overridden; anything but a table is left for _parse to reject."""
    if seed is None or not isinstance(doc, Mapping):
        return doc
    return {**doc, "seed": seed}


def from_dict(doc: Mapping[str, Any], seed: Optional[int] = None) -> Scenario:
    sc, errors = _parse(with_seed(doc, seed))
    if errors:
        raise ScenarioError(errors)
    return sc


def read_doc(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ScenarioError([f"{path}: no such file"])
    except json.JSONDecodeError as e:
        raise ScenarioError([f"{path}: not valid JSON ({e.msg} at line {e.lineno})"])


def load_scenario(path: Union[str, Path], seed: Optional[int] = None) -> Scenario:
    sc = from_dict(read_doc(path), seed=seed)
    log.debug("loaded scenario %s from %s (seed=%s)", sc.name, path, sc.seed)
    return sc

from __future__ import annotations
import bisect
import enum
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from dejavu.pipeline import Modality, StreamId
from dejavu.synchronizer import AlignedTuple
from dejavu.timebase import TimePoint, make_rng, to_seconds, truncated_normal_ns

Vec = Tuple[float, float]

# noise is drawn in micrometres so the ns truncated-normal sampler can be reused
_UM = 1_000_000


class ObjectClass(str, enum.Enum):
    CAR = "car"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"


class FusionMode(str, enum.Enum):
    LIDAR_DOMINANT = "lidar_dominant"
    CAMERA_GATED = "camera_gated"


def _dist(a: Vec, b: Vec) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


@dataclass(frozen=True)
class WorldObject:
    """Object on the ground plane; alive on [spawn, despawn] = [first, last waypoint]."""
    oid: int
    cls: ObjectClass
    waypoints: Tuple[Tuple[TimePoint, float, float], ...]
    extent: float = 0.5

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError(f"object {self.oid}: needs at least one waypoint")
        ts = [w[0] for w in self.waypoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"object {self.oid}: waypoint times must be strictly increasing")

    @property
    def spawn(self) -> TimePoint:
        return self.waypoints[0][0]

    @property
    def despawn(self) -> TimePoint:
        return self.waypoints[-1][0]

    def alive(self, t: TimePoint) -> bool:
        return self.spawn <= t <= self.despawn

    def position(self, t: TimePoint) -> Vec:
        if not self.alive(t):
            raise ValueError(f"object {self.oid} not alive at {t}")
        wps = self.waypoints
        ts = [w[0] for w in wps]
        i = bisect.bisect_right(ts, t) - 1
        if i >= len(wps) - 1:
            return (wps[-1][1], wps[-1][2])
        t0, x0, y0 = wps[i]
        t1, x1, y1 = wps[i + 1]
        f = (t - t0) / (t1 - t0)
        return (x0 + f * (x1 - x0), y0 + f * (y1 - y0))


@dataclass(frozen=True)
class FieldOfView:
    """Sector around the ego origin: heading and half-angle in degrees, range in metres."""
    heading_deg: float = 0.0
    half_angle_deg: float = 180.0
    range_m: float = 100.0

    def contains(self, p: Vec) -> bool:
        r = math.hypot(p[0], p[1])
        if r > self.range_m:
            return False
        if self.half_angle_deg >= 180.0 or r == 0.0:
            return True
        bearing = math.degrees(math.atan2(p[1], p[0]))
        diff = (bearing - self.heading_deg + 180.0) % 360.0 - 180.0
        return abs(diff) <= self.half_angle_deg


@dataclass(frozen=True)
class World:
    objects: Tuple[WorldObject, ...] = ()
    seed: int = 0

    def alive_at(self, t: TimePoint, fov: Optional[FieldOfView] = None) -> List[Tuple[int, Vec, ObjectClass]]:
        out = []
        for o in sorted(self.objects, key=lambda o: o.oid):
            if not o.alive(t):
                continue
            p = o.position(t)
            if fov is None or fov.contains(p):
                out.append((o.oid, p, o.cls))
        return out

    def classes(self) -> FrozenSet[ObjectClass]:
        return frozenset(o.cls for o in self.objects)


@dataclass(frozen=True)
class Observation:
    oid: int                       # simulation bookkeeping; fusion only uses order
    position: Vec
    cls: Optional[ObjectClass]     # camera only


@dataclass(frozen=True)
class ModalitySnapshot:
    stream: StreamId
    t_act: TimePoint
    observations: Tuple[Observation, ...]

    def oids(self) -> List[int]:
        return [o.oid for o in self.observations]


@dataclass(frozen=True)
class PerceptionParams:
    mode: FusionMode = FusionMode.LIDAR_DOMINANT
    gate: float = 2.0
    gate_track: float = 3.0
    max_misses: int = 2
    sigma_cam: float = 0.3
    fov: Dict[str, FieldOfView] = field(default_factory=dict)   # keyed by modality value

    def fov_for(self, modality: Modality) -> FieldOfView:
        return self.fov.get(modality.value, FieldOfView())


def render_snapshot(world: World, stream: StreamId, t_act: TimePoint,
                    params: Optional[PerceptionParams] = None) -> ModalitySnapshot:
    """Deterministic sensor model for one modality at one capture time.

    LiDAR sees exact positions without class; camera sees class with positions
    perturbed laterally (perpendicular to the line of sight) by sigma_cam.
    """
    params = params or PerceptionParams()
    fov = params.fov_for(stream.modality)
    rng = make_rng("snapshot", world.seed, stream.index, t_act)
    sigma_um = int(round(params.sigma_cam * _UM))
    obs: List[Observation] = []
    for oid, p, cls in world.alive_at(t_act, fov):
        if stream.modality == Modality.CAMERA:
            r = math.hypot(p[0], p[1])
            lat = (-p[1] / r, p[0] / r) if r > 0 else (0.0, 1.0)
            n = truncated_normal_ns(rng, sigma_um) / _UM
            obs.append(Observation(oid, (p[0] + n * lat[0], p[1] + n * lat[1]), cls))
        elif stream.modality == Modality.LIDAR:
            obs.append(Observation(oid, p, None))
        else:
            obs.append(Observation(oid, p, None))
    return ModalitySnapshot(stream, t_act, tuple(obs))


# ----- fusion -----

@dataclass(frozen=True)
class FusedDetection:
    position: Vec
    cls: Optional[ObjectClass]
    supporting: FrozenSet[int]     # stream indices

    def __post_init__(self):
        if not self.supporting:
            raise ValueError("detection must cite at least one supporting stream")


@dataclass(frozen=True)
class TrackState:
    tid: int
    position: Vec
    velocity: Vec
    age: int
    miss_count: int


@dataclass(frozen=True)
class PerceptionOutput:
    t_sys: TimePoint
    detections: Tuple[FusedDetection, ...]
    tracks: Tuple[TrackState, ...] = ()        # filled in after the tracker update
    camera_oids: Tuple[int, ...] = ()
    lidar_oids: Tuple[int, ...] = ()


def greedy_pairs(a: Sequence[Vec], b: Sequence[Vec], gate: float) -> List[Tuple[int, int, float]]:
    """One-to-one ascending-distance pairing within gate; ties -> lower a index, then b."""
    cand = []
    for i, pa in enumerate(a):
        for j, pb in enumerate(b):
            d = _dist(pa, pb)
            if d <= gate:
                cand.append((d, i, j))
    cand.sort()
    used_a, used_b, out = set(), set(), []
    for d, i, j in cand:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        out.append((i, j, d))
    return out


def fuse(tuple_: AlignedTuple, snapshots: Dict[int, ModalitySnapshot],
         mode: FusionMode = FusionMode.LIDAR_DOMINANT, gate: float = 2.0) -> PerceptionOutput:
    """Rule-based fusion of one camera and one LiDAR member of an aligned tuple."""
    cam = next((p for p in tuple_.members if p.stream.modality == Modality.CAMERA), None)
    lid = next((p for p in tuple_.members if p.stream.modality == Modality.LIDAR), None)
    if cam is None or lid is None:
        raise ValueError("fuse needs one camera and one lidar member in the tuple")
    cs = snapshots[cam.stream.index]
    ls = snapshots[lid.stream.index]

    pairs = greedy_pairs([o.position for o in ls.observations], [o.position for o in cs.observations], gate)
    cam_for = {i: j for i, j, _ in pairs}

    dets: List[FusedDetection] = []
    for i, lo in enumerate(ls.observations):
        j = cam_for.get(i)
        if j is None:
            if mode == FusionMode.CAMERA_GATED:
                continue
            dets.append(FusedDetection(lo.position, None, frozenset({lid.stream.index})))
        else:
            dets.append(FusedDetection(lo.position, cs.observations[j].cls,
                                       frozenset({lid.stream.index, cam.stream.index})))
    return PerceptionOutput(
        t_sys=tuple_.t_sys,
        detections=tuple(dets),
        camera_oids=tuple(cs.oids()),
        lidar_oids=tuple(ls.oids()),
    )


# ----- tracking -----

@dataclass
class Tracker:
    """Greedy nearest-neighbour tracker with constant-velocity prediction."""
    gate_track: float = 3.0
    max_misses: int = 2
    _tracks: List[dict] = field(default_factory=list, init=False)
    _next_tid: int = field(default=1, init=False)
    _last_t: Optional[TimePoint] = field(default=None, init=False)

    def update(self, detections: Sequence[FusedDetection], t_sys: TimePoint) -> List[TrackState]:
        """Associate one frame; returns the tracks confirmed by a detection this frame."""
        if self._last_t is not None and t_sys <= self._last_t:
            raise ValueError(f"t_sys must increase across updates ({t_sys} <= {self._last_t})")

        for tr in self._tracks:
            dt = to_seconds(t_sys - tr["t"])
            tr["pred"] = (tr["pos"][0] + tr["vel"][0] * dt, tr["pos"][1] + tr["vel"][1] * dt)

        pairs = greedy_pairs([tr["pred"] for tr in self._tracks], [d.position for d in detections],
                             self.gate_track)
        matched_tracks = set()
        matched_dets = set()
        for i, j, _ in pairs:
            tr = self._tracks[i]
            dt = to_seconds(t_sys - tr["t"])
            p = detections[j].position
            tr["vel"] = ((p[0] - tr["pos"][0]) / dt, (p[1] - tr["pos"][1]) / dt)
            tr["pos"] = p
            tr["t"] = t_sys
            tr["age"] += 1
            tr["miss"] = 0
            matched_tracks.add(i)
            matched_dets.add(j)

        for i, tr in enumerate(self._tracks):
            if i not in matched_tracks:
                tr["miss"] += 1

        self._tracks = [tr for tr in self._tracks if tr["miss"] <= self.max_misses]

        for j, d in enumerate(detections):
            if j in matched_dets:
                continue
            self._tracks.append({"tid": self._next_tid, "pos": d.position, "vel": (0.0, 0.0),
                                 "t": t_sys, "age": 1, "miss": 0, "pred": d.position})
            self._next_tid += 1

        self._last_t = t_sys
        return [self._state(tr) for tr in self._tracks if tr["miss"] == 0]

    def all_tracks(self) -> List[TrackState]:
        return [self._state(tr) for tr in self._tracks]

    @staticmethod
    def _state(tr: dict) -> TrackState:
        return TrackState(tr["tid"], tr["pos"], tr["vel"], tr["age"], tr["miss"])


def track_update(tracker: Tracker, detections: Sequence[FusedDetection], t_sys: TimePoint) -> List[TrackState]:
    return tracker.update(detections, t_sys)

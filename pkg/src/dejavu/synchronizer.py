from __future__ import annotations
import enum
import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple

from dejavu.pipeline import SensorPacket, StreamId
from dejavu.timebase import Duration, TimePoint

log = logging.getLogger(__name__)


class SyncMode(str, enum.Enum):
    EXACT = "exact"
    APPROXIMATE = "approximate"


@dataclass(frozen=True)
class SyncPolicy:
    mode: SyncMode = SyncMode.APPROXIMATE
    slop: Duration = 40_000_000
    queue_size: int = 10

    @property
    def effective_slop(self) -> Duration:
        return 0 if self.mode == SyncMode.EXACT else self.slop


@dataclass(frozen=True)
class AlignedTuple:
    members: Tuple[SensorPacket, ...]   # one per stream, stream-index order
    t_sys: TimePoint
    pivot: TimePoint
    spread: Duration
    content_offsets: Dict[int, int]     # stream index -> signed frames (0 == fresh)

    def member(self, stream_index: int) -> SensorPacket:
        for p in self.members:
            if p.stream.index == stream_index:
                return p
        raise KeyError(stream_index)


@dataclass
class _Queued:
    packet: SensorPacket
    arrival: TimePoint
    order: int


# (stream, t_sys) -> reference frame index used for content_offsets
FrameIndex = Callable[[StreamId, TimePoint], int]


@dataclass
class ApproxTimeSynchronizer:
    """Timestamp-only alignment of m streams.

    Queues hold (packet, arrival). On every push the matcher runs to quiescence:
    among choices of one queued packet per stream whose t_pre is above that stream's
    last emitted t_pre and whose spread is within slop, emit the one with minimum
    spread, then smaller pivot, then the smaller seq vector. Only t_pre, seq and
    arrival order are read, never payload or t_act.
    """
    streams: Sequence[StreamId]
    policy: SyncPolicy = field(default_factory=SyncPolicy)
    frame_index: Optional[FrameIndex] = None
    on_note: Optional[Callable[[str, dict], None]] = None

    def __post_init__(self):
        self.streams = sorted(self.streams)
        if len({s.index for s in self.streams}) != len(self.streams):
            raise ValueError("stream indices must be unique")
        if self.policy.queue_size < 1:
            raise ValueError("queue_size must be >= 1")
        if self.policy.slop < 0:
            raise ValueError("slop must be >= 0")
        self._queues: Dict[int, Deque[_Queued]] = {}
        self._floor: Dict[int, Optional[TimePoint]] = {}
        self._order = 0
        self.emitted = 0
        self.reset()

    # ----- state -----

    def reset(self) -> "ApproxTimeSynchronizer":
        self._queues = {s.index: deque() for s in self.streams}
        self._floor = {s.index: None for s in self.streams}
        return self

    def queued(self, stream_index: int) -> List[SensorPacket]:
        return [q.packet for q in self._queues[stream_index]]

    def floor(self, stream_index: int) -> Optional[TimePoint]:
        return self._floor[stream_index]

    def _note(self, text: str, **fields):
        log.debug("%s %s", text, fields)
        if self.on_note is not None:
            self.on_note(text, fields)

    # ----- main entry -----

    def push(self, packet: SensorPacket, arrival: TimePoint) -> List[AlignedTuple]:
        idx = packet.stream.index
        if idx not in self._queues:
            raise KeyError(f"unknown stream {packet.stream.label()}")
        q = self._queues[idx]

        key = (packet.seq, packet.t_pre)
        if any((e.packet.seq, e.packet.t_pre) == key for e in q):
            self._note("duplicate dropped", stream=idx, seq=packet.seq, t_pre=packet.t_pre)
            return []

        q.append(_Queued(packet, arrival, self._order))
        self._order += 1
        if len(q) > self.policy.queue_size:
            old = q.popleft()
            self._note("evicted", stream=idx, seq=old.packet.seq, t_pre=old.packet.t_pre)

        out: List[AlignedTuple] = []
        while True:
            best = self._best_candidate()
            if best is None:
                break
            out.append(self._emit(best, arrival))
        return out

    # ----- matcher -----

    def _eligible(self, idx: int) -> List[_Queued]:
        fl = self._floor[idx]
        return [e for e in self._queues[idx] if fl is None or e.packet.t_pre > fl]

    def _best_candidate(self) -> Optional[Tuple[_Queued, ...]]:
        per_stream = [self._eligible(s.index) for s in self.streams]
        if any(not c for c in per_stream):
            return None
        slop = self.policy.effective_slop
        best_key = None
        best = None
        for combo in itertools.product(*per_stream):
            stamps = [e.packet.t_pre for e in combo]
            spread = max(stamps) - min(stamps)
            if spread > slop:
                continue
            key = (
                spread,
                max(stamps),
                tuple(e.packet.seq for e in combo),
                tuple(stamps),
                tuple(e.order for e in combo),
            )
            if best_key is None or key < best_key:
                best_key, best = key, combo
        return best

    def _emit(self, combo: Tuple[_Queued, ...], t_sys: TimePoint) -> AlignedTuple:
        members = tuple(e.packet for e in combo)
        stamps = [p.t_pre for p in members]
        spread = max(stamps) - min(stamps)
        assert spread <= self.policy.effective_slop, "emitted tuple exceeds slop"

        for p in members:
            fl = self._floor[p.stream.index]
            assert fl is None or p.t_pre > fl, "non-monotonic emission"
            self._floor[p.stream.index] = p.t_pre

        for s in self.streams:
            fl = self._floor[s.index]
            kept = deque(e for e in self._queues[s.index] if e.packet.t_pre > fl)
            self._queues[s.index] = kept

        offsets: Dict[int, int] = {}
        if self.frame_index is not None:
            for p in members:
                offsets[p.stream.index] = p.payload - self.frame_index(p.stream, t_sys)

        self.emitted += 1
        return AlignedTuple(
            members=members,
            t_sys=t_sys,
            pivot=max(stamps),
            spread=spread,
            content_offsets=offsets,
        )


# thin aliases
def push(state: ApproxTimeSynchronizer, packet: SensorPacket, arrival: TimePoint) -> List[AlignedTuple]:
    return state.push(packet, arrival)


def reset(state: ApproxTimeSynchronizer) -> ApproxTimeSynchronizer:
    return state.reset()

from __future__ import annotations
import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Deque, Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

from scipy.stats import chisquare

from dejavu.pipeline import SensorPacket, StreamId, forged_copy, frame_duration
from dejavu.timebase import ClockModel, Duration, TimePoint, corrupt_sync, make_rng

log = logging.getLogger(__name__)


class Capability(str, enum.Enum):
    CLOCK_DESYNC = "clock_desync"              # corrupt the shared time source
    TIMESTAMP_FORGE = "timestamp_forge"        # rewrite packets in flight
    REPLAY_IMPERSONATE = "replay_impersonate"  # publish ahead of the genuine sender


class DelayKind(str, enum.Enum):
    CONSTANT = "constant"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class DelayModel:
    kind: DelayKind = DelayKind.CONSTANT
    k: int = 0
    k_by_stream: Mapping[int, int] = field(default_factory=dict)

    def k_for(self, stream_index: int) -> int:
        return self.k_by_stream.get(stream_index, self.k)


@dataclass(frozen=True)
class AttackSpec:
    targets: FrozenSet[int]
    capability: Capability = Capability.TIMESTAMP_FORGE
    delay: DelayModel = field(default_factory=DelayModel)
    stamp_offset: Duration = 0
    lead: Duration = 5_000_000
    history_depth: int = 1
    start_time: TimePoint = 0
    stop_time: Optional[TimePoint] = None
    inject_skew_ppm: Fraction = Fraction(0)
    seed: int = 0

    def active_at(self, t: TimePoint) -> bool:
        return t >= self.start_time and (self.stop_time is None or t < self.stop_time)

    @property
    def is_uni(self) -> bool:
        return len(self.targets) == 1


# ----- delay distribution -----

def sample_delay(spec: AttackSpec, seq: int, stream_index: Optional[int] = None) -> int:
    """Frames of delay for one frame; uniform draws are i.i.d. per (seed, stream, seq)."""
    if seq < 0:
        raise ValueError(f"seq must be >= 0, got {seq}")
    if stream_index is None:
        if len(spec.targets) != 1:
            raise ValueError("stream_index is required when the attack has several targets")
        stream_index = next(iter(spec.targets))
    k = spec.delay.k_for(stream_index)
    if spec.delay.kind == DelayKind.CONSTANT or k == 0:
        return k
    rng = make_rng("delay", spec.seed, stream_index, seq)
    return int(rng.integers(0, k + 1))


def delay_schedule(spec: AttackSpec, stream_index: int, seqs: Sequence[int]) -> Dict[int, int]:
    return {s: sample_delay(spec, s, stream_index) for s in seqs}


def delay_histogram(spec: AttackSpec, stream_index: int, n: int) -> Tuple[List[int], float]:
    """Counts of each delay value over seqs 0..n-1 and the chi-square p-value vs Uniform{0..k}."""
    k = spec.delay.k_for(stream_index)
    counts = [0] * (k + 1)
    for d in delay_schedule(spec, stream_index, range(n)).values():
        counts[d] += 1
    if k == 0 or spec.delay.kind == DelayKind.CONSTANT:
        return counts, 1.0
    return counts, float(chisquare(counts).pvalue)


# ----- per-stream history -----

@dataclass
class FrameBuffer:
    """Genuine packets the attacker has seen on one stream, newest last."""
    depth: int
    frames: Deque[SensorPacket] = field(default_factory=deque)

    def remember(self, packet: SensorPacket) -> None:
        self.frames.append(packet)
        while len(self.frames) > self.depth:
            self.frames.popleft()

    def back(self, n: int) -> Tuple[Optional[SensorPacket], bool]:
        """Packet n frames before the newest; clamps to the oldest (second value True)."""
        if not self.frames:
            return None, False
        if n < len(self.frames):
            return self.frames[-1 - n], False
        return self.frames[0], True

    def __len__(self) -> int:
        return len(self.frames)


NoteFn = Callable[[str, dict], None]


def _quiet(text: str, fields: dict) -> None:
    log.debug("%s %s", text, fields)


# ----- timestamp forging -----

def stale_content_fresh_stamp(spec: AttackSpec, buffer: FrameBuffer, current: SensorPacket,
                              note: NoteFn = _quiet) -> Optional[SensorPacket]:
    """Content from frame current.seq - d, stamp of frame current.seq.

    `current` is the benign packet for the current frame (its t_pre is the benign
    stamp) and must already be the newest entry of `buffer`.
    """
    if not len(buffer):
        return None
    d = sample_delay(spec, current.seq, current.stream.index)
    old, clamped = buffer.back(d)
    if clamped:
        note("delay clamped to history", {"stream": current.stream.index, "seq": current.seq,
                                           "drawn": d, "used": current.seq - old.seq})
    return forged_copy(current, t_act=old.t_act, payload=old.payload)


def shift_stamp(spec: AttackSpec, packet: SensorPacket) -> SensorPacket:
    return forged_copy(packet, t_pre=packet.t_pre + spec.stamp_offset)


# ----- replay impersonation -----

@dataclass
class ReplayImpersonator:
    """Watches a stream's genuine arrivals and plants replayed frames just ahead of them.

    Next arrival is predicted as last arrival + EMA of inter-arrival gaps; the next
    stamp as last stamp + EMA of stamp gaps. Nothing is planned until two genuine
    arrivals have been seen.
    """
    spec: AttackSpec
    stream: StreamId
    alpha: float = 0.2
    _buffer: FrameBuffer = field(init=False)
    _last_arrival: Optional[TimePoint] = field(default=None, init=False)
    _last: Optional[SensorPacket] = field(default=None, init=False)
    _gap_ema: Optional[float] = field(default=None, init=False)
    _stamp_ema: Optional[float] = field(default=None, init=False)
    planned: int = field(default=0, init=False)

    def __post_init__(self):
        if self.spec.lead <= 0:
            raise ValueError("replay lead must be > 0")
        if self.spec.history_depth < 1:
            raise ValueError("history_depth must be >= 1")
        self._buffer = FrameBuffer(depth=self.spec.history_depth + 1)

    def _ema(self, prev: Optional[float], x: float) -> float:
        return x if prev is None else self.alpha * x + (1.0 - self.alpha) * prev

    def observe(self, packet: SensorPacket, arrival: TimePoint) -> None:
        if self._last is not None and self._last_arrival is not None:
            self._gap_ema = self._ema(self._gap_ema, float(arrival - self._last_arrival))
            self._stamp_ema = self._ema(self._stamp_ema, float(packet.t_pre - self._last.t_pre))
        self._last = packet
        self._last_arrival = arrival
        self._buffer.remember(packet)

    @property
    def estimable(self) -> bool:
        return self._gap_ema is not None

    def predicted_arrival(self) -> Optional[TimePoint]:
        if not self.estimable:
            return None
        return self._last_arrival + int(round(self._gap_ema))

    def plan(self, now: TimePoint, note: NoteFn = _quiet) -> Optional[Tuple[TimePoint, SensorPacket]]:
        """(send time, forged packet) for the next expected genuine frame, or None."""
        if not self.estimable or not self.spec.active_at(now):
            return None
        send_at = self.predicted_arrival() - self.spec.lead
        if send_at < now:
            note("replay slot already passed", {"stream": self.stream.index, "now": now, "slot": send_at})
            return None
        old, clamped = self._buffer.back(self.spec.history_depth - 1)
        if clamped:
            note("replay history clamped", {"stream": self.stream.index, "depth": self.spec.history_depth})
        forged = forged_copy(
            old,
            seq=self._last.seq + 1,
            t_pre=self._last.t_pre + int(round(self._stamp_ema)),
        )
        self.planned += 1
        return send_at, forged


def replay_impersonate(spec: AttackSpec, observed_arrivals: Sequence[Tuple[SensorPacket, TimePoint]],
                       history: Optional[Sequence[SensorPacket]] = None,
                       now: Optional[TimePoint] = None) -> Optional[Tuple[TimePoint, SensorPacket]]:
    """Functional form: replay the observations into a fresh impersonator and plan once."""
    if not observed_arrivals:
        return None
    stream = observed_arrivals[0][0].stream
    imp = ReplayImpersonator(spec, stream)
    for p in history or ():
        imp._buffer.remember(p)
    for p, a in observed_arrivals:
        imp.observe(p, a)
    return imp.plan(observed_arrivals[-1][1] if now is None else now)


# ----- wiring -----

@dataclass
class StreamAttack:
    """Attack state owned by one targeted stream."""
    stream: StreamId
    spec: AttackSpec
    period: Duration
    buffer: FrameBuffer
    replay: Optional[ReplayImpersonator] = None

    def tamper(self, packet: SensorPacket, note: NoteFn = _quiet) -> SensorPacket:
        """Forging transform of a freshly captured benign packet (identity outside the window)."""
        self.buffer.remember(packet)
        if self.spec.capability != Capability.TIMESTAMP_FORGE or not self.spec.active_at(packet.t_act):
            return packet
        out = stale_content_fresh_stamp(self.spec, self.buffer, packet, note)
        if out is None:
            return packet
        if self.spec.stamp_offset:
            out = shift_stamp(self.spec, out)
        return out


@dataclass
class AttackPlan:
    spec: Optional[AttackSpec]
    clocks: Dict[int, ClockModel]              # benign clocks
    attacked_clocks: Dict[int, ClockModel]     # desynchronized clocks for targeted streams
    per_stream: Dict[int, StreamAttack]

    def clock_for(self, stream_index: int, t_act: TimePoint) -> ClockModel:
        if (stream_index in self.attacked_clocks and self.spec is not None
                and self.spec.active_at(t_act)):
            return self.attacked_clocks[stream_index]
        return self.clocks[stream_index]

    def for_stream(self, stream_index: int) -> Optional[StreamAttack]:
        return self.per_stream.get(stream_index)


class UnknownTarget(ValueError):
    pass


def apply_attack(spec: Optional[AttackSpec], streams: Sequence[StreamId],
                 periods: Mapping[int, Duration], clocks: Mapping[int, ClockModel],
                 alpha: float = 0.2) -> AttackPlan:
    """Wire an attack into a scenario's streams (Uni when one target, Mul otherwise)."""
    clocks = dict(clocks)
    if spec is None:
        return AttackPlan(None, clocks, {}, {})

    known = {s.index for s in streams}
    missing = sorted(set(spec.targets) - known)
    if missing:
        raise UnknownTarget(f"attack.targets references unknown stream(s): {missing}")

    by_index = {s.index: s for s in streams}
    attacked_clocks: Dict[int, ClockModel] = {}
    per_stream: Dict[int, StreamAttack] = {}
    for idx in sorted(spec.targets):
        stream = by_index[idx]
        k = spec.delay.k_for(idx)
        if spec.capability == Capability.CLOCK_DESYNC:
            if spec.delay.kind != DelayKind.CONSTANT:
                raise ValueError("clock_desync supports constant delay only")
            injected = spec.stamp_offset + frame_duration(periods[idx], k)
            attacked_clocks[idx] = corrupt_sync(clocks[idx], injected, spec.inject_skew_ppm)
            continue
        sa = StreamAttack(stream=stream, spec=spec, period=periods[idx], buffer=FrameBuffer(depth=k + 1))
        if spec.capability == Capability.REPLAY_IMPERSONATE:
            sa.replay = ReplayImpersonator(spec, stream, alpha=alpha)
        per_stream[idx] = sa
    log.info("attack wired: capability=%s targets=%s delay=%s/%s",
             spec.capability.value, sorted(spec.targets), spec.delay.kind.value, spec.delay.k)
    return AttackPlan(spec, clocks, attacked_clocks, per_stream)

from __future__ import annotations
import dataclasses
import enum
from dataclasses import dataclass, field
from typing import List, Optional

from numpy.random import Generator

from dejavu.timebase import ClockModel, Duration, TimePoint, local_time, make_rng, truncated_normal_ns


class Modality(str, enum.Enum):
    CAMERA = "camera"
    LIDAR = "lidar"
    OTHER = "other"


@dataclass(frozen=True, order=True)
class StreamId:
    index: int
    modality: Modality = field(compare=False)
    name: str = field(default="", compare=False)

    def label(self) -> str:
        return self.name or f"{self.modality.value}{self.index}"


@dataclass(frozen=True)
class SensorPacket:
    """(content captured at t_act, stamped t_pre) as seen on the wire.

    seq is the publish frame index; payload is the content frame index (the key
    perception renders from). `forged` is bookkeeping only: the synchronizer never
    reads it.
    """
    stream: StreamId
    seq: int
    t_act: TimePoint
    t_pre: TimePoint
    payload: int
    forged: bool = False

    @property
    def stamp_error(self) -> Duration:
        return self.t_pre - self.t_act

    def benign_view(self) -> tuple:
        return (self.stream.index, self.seq, self.t_act, self.t_pre, self.payload)


@dataclass
class Channel:
    """Per-stream latency channel: base latency plus truncated-normal jitter, floored at 0."""
    base_latency: Duration = 0
    jitter_stddev: Duration = 0
    seed: int = 0
    allow_reorder: bool = False
    _rng: Generator = field(init=False, repr=False, compare=False)
    _last_arrival: Optional[TimePoint] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.base_latency < 0 or self.jitter_stddev < 0:
            raise ValueError("channel latency and jitter must be >= 0")
        self._rng = make_rng("channel", self.seed)


def capture_schedule(stream: StreamId, period: Duration, phase: Duration, horizon: Duration) -> List[TimePoint]:
    if period <= 0:
        raise ValueError(f"{stream.label()}: period must be > 0, got {period}")
    if not 0 <= phase < period:
        raise ValueError(f"{stream.label()}: phase must satisfy 0 <= phase < period, got {phase}")
    if horizon < phase:
        return []
    return list(range(phase, horizon + 1, period))


def frame_duration(period: Duration, k: int) -> Duration:
    """k frames on a stream == k periods of that stream."""
    return k * period


def stamp_and_publish(stream: StreamId, seq: int, t_act: TimePoint, clock: ClockModel) -> SensorPacket:
    return SensorPacket(
        stream=stream,
        seq=seq,
        t_act=t_act,
        t_pre=local_time(clock, t_act),
        payload=seq,
        forged=False,
    )


def transmit(channel: Channel, packet: SensorPacket, t_send: TimePoint) -> TimePoint:
    if t_send < packet.t_act:
        raise ValueError(
            f"{packet.stream.label()} seq={packet.seq}: cannot send at {t_send} before capture at {packet.t_act}"
        )
    # latency never goes negative; the jitter itself is two-sided around base_latency
    latency = max(0, channel.base_latency + truncated_normal_ns(channel._rng, channel.jitter_stddev))
    arrival = t_send + latency
    if not channel.allow_reorder and channel._last_arrival is not None:
        arrival = max(arrival, channel._last_arrival + 1)
    channel._last_arrival = arrival
    return arrival


def forged_copy(packet: SensorPacket, **changes) -> SensorPacket:
    return dataclasses.replace(packet, forged=True, **changes)

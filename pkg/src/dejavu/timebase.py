from __future__ import annotations
import dataclasses
import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

import numpy as np
from numpy.random import SFC64, Generator, SeedSequence

# Integer nanoseconds everywhere. Epoch is 0; negative values are legal for pre-epoch math.
TimePoint = int
Duration = int

EPOCH: TimePoint = 0
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000
PPM = 1_000_000
TRUNCATE_SIGMAS = 4

Rational = Union[int, float, str, Fraction]


def ms(x: Rational) -> Duration:
    return int(round(Fraction(str(x)) * NS_PER_MS))


def sec(x: Rational) -> Duration:
    return int(round(Fraction(str(x)) * NS_PER_S))


def to_seconds(ns: int) -> float:
    return ns / NS_PER_S


def as_fraction(x: Rational) -> Fraction:
    if isinstance(x, Fraction):
        return x
    return Fraction(str(x))


# ----- seeded random streams -----

def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from arbitrary key parts (platform and hash-seed independent)."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def make_rng(*parts: object) -> Generator:
    return Generator(SFC64(SeedSequence(derive_seed(*parts))))


def truncated_normal_ns(rng: Generator, stddev: Duration) -> int:
    """Zero-mean normal sample, resampled until inside ±4σ, rounded to the nearest ns."""
    if stddev <= 0:
        return 0
    bound = TRUNCATE_SIGMAS * stddev
    while True:
        x = rng.normal(0.0, float(stddev))
        if -bound <= x <= bound:
            return int(np.rint(x))


# ----- clocks -----

@dataclass
class ClockModel:
    """Affine local clock: offset + skew relative to epoch, plus two-sided jitter.

    The only mutable part is the RNG cursor; two clocks built from the same fields
    produce the same reading sequence.
    """
    offset: Duration = 0
    skew_ppm: Fraction = Fraction(0)
    jitter_stddev: Duration = 0
    seed: int = 0
    _rng: Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.skew_ppm = as_fraction(self.skew_ppm)
        if self.jitter_stddev < 0:
            raise ValueError(f"jitter_stddev must be >= 0, got {self.jitter_stddev}")
        self._rng = make_rng("clock", self.seed)

    @property
    def is_identity(self) -> bool:
        return self.offset == 0 and self.skew_ppm == 0 and self.jitter_stddev == 0

    def read(self, true_time: TimePoint) -> TimePoint:
        return local_time(self, true_time)


def local_time(clock: ClockModel, true_time: TimePoint) -> TimePoint:
    drift = round(clock.skew_ppm * (true_time - EPOCH) / PPM)
    jitter = truncated_normal_ns(clock._rng, clock.jitter_stddev)
    return true_time + clock.offset + int(drift) + jitter


def corrupt_sync(clock: ClockModel, injected_offset: Duration, injected_skew_ppm: Rational = 0) -> ClockModel:
    """Grandmaster spoofing / delay injection: shift the clock itself, not the packets."""
    new = dataclasses.replace(
        clock,
        offset=clock.offset + injected_offset,
        skew_ppm=clock.skew_ppm + as_fraction(injected_skew_ppm),
    )
    # replace() reseeds; the jitter stream must continue where the old clock left off
    new._rng.bit_generator.state = clock._rng.bit_generator.state
    return new

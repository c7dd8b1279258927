from __future__ import annotations
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from scipy.stats import chisquare

from dejavu.perception import FusedDetection, ObjectClass, TrackState, Vec, greedy_pairs
from dejavu.synchronizer import AlignedTuple
from dejavu.timebase import TimePoint

GroundTruth = Tuple[int, Vec, ObjectClass]     # (oid, position, class)


@dataclass(frozen=True)
class DetectionFrameResult:
    t_sys: TimePoint
    tp: int
    fp: int
    fn: int
    matches: Tuple[Tuple[int, int], ...]   # (oid, detection index)
    missed: Tuple[int, ...] = ()           # oids without a detection


def match_frame(detections: Sequence[Vec], gt_alive: Sequence[GroundTruth], radius: float = 2.0,
                t_sys: TimePoint = 0) -> DetectionFrameResult:
    """Greedy center-distance matching within radius; ties -> (oid, detection index)."""
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    gt = sorted(gt_alive, key=lambda g: g[0])
    pairs = greedy_pairs([g[1] for g in gt], list(detections), radius)
    matches = tuple(sorted((gt[i][0], j) for i, j, _ in pairs))
    matched_oids = {m[0] for m in matches}
    tp = len(matches)
    return DetectionFrameResult(
        t_sys=t_sys,
        tp=tp,
        fp=len(detections) - tp,
        fn=len(gt) - tp,
        matches=matches,
        missed=tuple(g[0] for g in gt if g[0] not in matched_oids),
    )


# ----- CLEAR-MOT -----

@dataclass
class TrackingEvalState:
    last_tid: Dict[int, int] = field(default_factory=dict)
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    gt: int = 0
    matches: int = 0

    def update(self, tracks: Sequence[TrackState], gt_alive: Sequence[GroundTruth],
               radius: float = 2.0, t_sys: TimePoint = 0) -> DetectionFrameResult:
        res = match_frame([t.position for t in tracks], gt_alive, radius, t_sys)
        for oid, j in res.matches:
            tid = tracks[j].tid
            prev = self.last_tid.get(oid)
            if prev is not None and prev != tid:
                self.idsw += 1
            self.last_tid[oid] = tid
        self.fp += res.fp
        self.fn += res.fn
        self.gt += len(gt_alive)
        self.matches += res.tp
        return res


def mota(state: TrackingEvalState) -> Optional[Fraction]:
    """1 - (fn + fp + idsw) / gt; None when there was no ground truth."""
    if state.gt <= 0:
        return None
    return 1 - Fraction(state.fn + state.fp + state.idsw, state.gt)


# ----- pairing -----

def pairing_stats(tuples: Iterable[AlignedTuple]) -> Dict[int, Counter]:
    hist: Dict[int, Counter] = {}
    for t in tuples:
        for idx, off in t.content_offsets.items():
            hist.setdefault(idx, Counter())[off] += 1
    return hist


def mean_abs_offset(hist: Dict[int, Counter]) -> Fraction:
    total = sum(sum(c.values()) for c in hist.values())
    if not total:
        return Fraction(0)
    return Fraction(sum(abs(k) * v for c in hist.values() for k, v in c.items()), total)


def offset_uniformity(hist: Counter, k: int) -> float:
    """Chi-square p-value of one stream's offsets against Uniform{-k..0}."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    observed = [hist.get(-d, 0) for d in range(k + 1)]
    if sum(observed) != sum(hist.values()):
        return 0.0
    return float(chisquare(observed).pvalue)


# ----- detection totals -----

@dataclass
class DetectionTotals:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, r: DetectionFrameResult) -> None:
        self.tp += r.tp
        self.fp += r.fp
        self.fn += r.fn

    @property
    def precision(self) -> Optional[Fraction]:
        d = self.tp + self.fp
        return Fraction(self.tp, d) if d else None

    @property
    def recall(self) -> Optional[Fraction]:
        d = self.tp + self.fn
        return Fraction(self.tp, d) if d else None

    @property
    def f1(self) -> Optional[Fraction]:
        if self.tp + self.fp + self.fn == 0:
            return None
        return Fraction(2 * self.tp, 2 * self.tp + self.fp + self.fn)


def class_totals(detections: Sequence[FusedDetection], gt_alive: Sequence[GroundTruth],
                 radius: float, into: Dict[ObjectClass, DetectionTotals]) -> None:
    """Per-class scoring: a detection counts for class c when labelled c (unknown labels
    count for no class); ground truth of class c is scored against those detections."""
    for cls in into:
        dets = [d.position for d in detections if d.cls == cls]
        gts = [g for g in gt_alive if g[2] == cls]
        into[cls].add(match_frame(dets, gts, radius))


@dataclass
class MetricsReport:
    pairing: Dict[int, Counter]
    mean_abs_offset: Fraction
    detection: DetectionTotals
    tracking: TrackingEvalState
    per_class: Dict[ObjectClass, DetectionTotals] = field(default_factory=dict)
    frames: List[DetectionFrameResult] = field(default_factory=list)

    @property
    def precision(self) -> Optional[Fraction]:
        return self.detection.precision

    @property
    def recall(self) -> Optional[Fraction]:
        return self.detection.recall

    @property
    def f1(self) -> Optional[Fraction]:
        return self.detection.f1

    @property
    def mota(self) -> Optional[Fraction]:
        return mota(self.tracking)

    @property
    def idsw(self) -> int:
        return self.tracking.idsw

    def check(self) -> None:
        m = self.mota
        if m is not None:
            t = self.tracking
            assert m == 1 - Fraction(t.fn + t.fp + t.idsw, t.gt)
        for v in (self.precision, self.recall):
            assert v is None or 0 <= v <= 1
        f1 = self.f1
        if f1 is not None:
            assert (f1 == 0) == (self.detection.tp == 0)

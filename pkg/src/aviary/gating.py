"""Decision math between raw model outputs and pipeline actions.

Pure functions throughout: IoU, greedy suppression, the class/score/area
detection gates, softmax, test-time-augmentation averaging, and the
auto-log/review confidence split.  Every score gate is strictly ``>`` so
boundary values are deterministic (a 0.70 score does not pass a 0.7 gate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x1, self.y1, self.x2, self.y2)):
            raise ValueError(f"bbox coordinates must be finite: {self}")
        if self.x1 >= self.x2 or self.y1 >= self.y2:
            raise ValueError(f"bbox must have positive extent: {self}")

    @classmethod
    def normalized(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        """Build a box reordering swapped coordinates; zero extent is rejected
        by the constructor."""
        return cls(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    score: float
    class_id: int
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class ProbVector:
    probs: tuple[float, ...]

    def __post_init__(self):
        if not self.probs:
            raise ValueError("probability vector is empty")
        for i, p in enumerate(self.probs):
            if not (math.isfinite(p) and 0.0 <= p <= 1.0):
                raise ValueError(f"prob[{i}] out of range: {p}")
        total = sum(self.probs)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {total}, expected 1 within 1e-6")

    def __len__(self) -> int:
        return len(self.probs)


AUTO_LOG = "auto_log"
REVIEW = "review"


@dataclass(frozen=True)
class ClassifyDecision:
    kind: str  # AUTO_LOG or REVIEW
    species_index: int
    confidence: float
    topk: tuple[tuple[int, float], ...]


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area() + b.area() - inter)


def suppress(dets: list[Detection], iou_thr: float) -> list[Detection]:
    """Greedy descending-score suppression (classic NMS).

    Keep the highest-scoring detection, drop every remaining one overlapping
    a kept box with IoU > ``iou_thr``, repeat.  Ties in score preserve input
    order, so the result is deterministic.  Output is sorted by score desc.
    """
    ordered = sorted(dets, key=lambda d: -d.score)
    kept: list[Detection] = []
    for d in ordered:
        if all(iou(d.bbox, k.bbox) <= iou_thr for k in kept):
            kept.append(d)
    return kept


def filter_detections(dets: list[Detection], frame_w: int, frame_h: int, cfg) -> list[Detection]:
    """Full detection gate: bird class, score, suppression, then area.

    Survivors are detections of the configured bird class with score strictly
    above the detection threshold that survive NMS and whose box covers more
    than ``area_fraction_threshold`` of the frame.  Sorted by score desc.
    """
    if frame_w <= 0 or frame_h <= 0:
        raise ValueError(f"frame dims must be positive, got {frame_w}x{frame_h}")
    birds = [d for d in dets if d.class_id == cfg.bird_class_id]
    confident = [d for d in birds if d.score > cfg.det_score_threshold]
    kept = suppress(confident, cfg.iou_threshold)
    min_area = cfg.area_fraction_threshold * frame_w * frame_h
    return [d for d in kept if d.bbox.area() > min_area]


def softmax(logits: list[float]) -> ProbVector:
    """Numerically-stable softmax (max subtraction before exponentiation)."""
    if not logits:
        raise ValueError("softmax of empty logits")
    if any(not math.isfinite(v) for v in logits):
        raise ValueError("softmax input contains NaN or infinite values")
    m = max(logits)
    exps = [math.exp(v - m) for v in logits]
    total = sum(exps)
    return ProbVector(tuple(e / total for e in exps))


def tta_average(runs: list[ProbVector]) -> ProbVector:
    """Elementwise mean of augmentation runs, renormalized to sum 1."""
    if not runs:
        raise ValueError("tta_average of zero runs")
    n = len(runs[0])
    for r in runs:
        if len(r) != n:
            raise ValueError(f"length mismatch: {len(r)} != {n}")
    sums = [0.0] * n
    for r in runs:
        for i, p in enumerate(r.probs):
            sums[i] += p
    total = sum(sums)
    return ProbVector(tuple(s / total for s in sums))


def classify_gate(probs: ProbVector, cfg, k: int = 3) -> ClassifyDecision:
    """Split a classification into auto-log vs review.

    The winner is the argmax (ties to the lowest index); the decision is
    auto_log only when the winning probability is strictly above the
    classification confidence threshold.  topk is sorted by probability desc,
    ties by index asc.
    """
    if not 1 <= k <= len(probs):
        raise ValueError(f"k must be in [1, {len(probs)}], got {k}")
    best = max(range(len(probs)), key=lambda i: (probs.probs[i], -i))
    confidence = probs.probs[best]
    kind = AUTO_LOG if confidence > cfg.cls_confidence_threshold else REVIEW
    order = sorted(range(len(probs)), key=lambda i: (-probs.probs[i], i))
    topk = tuple((i, probs.probs[i]) for i in order[:k])
    return ClassifyDecision(kind=kind, species_index=best, confidence=confidence, topk=topk)

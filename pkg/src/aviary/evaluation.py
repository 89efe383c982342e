"""Offline evaluation: confusion matrix, accuracy, precision/recall, top-k,
and fixed-threshold detection matching.

Evaluation is manifest-driven (JSONL) and decoupled from the live pipeline so
it runs on arbitrary labeled sets.  Headline precision/recall are macro
averages over classes with defined values; classes with zero denominators are
reported as absent, never as 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gating import BBox, Detection, iou


class EvalError(Exception):
    pass


@dataclass(frozen=True)
class LabeledPrediction:
    true_index: int
    predicted_topk: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.predicted_topk:
            raise EvalError("predicted_topk must be nonempty")
        probs = [p for _, p in self.predicted_topk]
        if probs != sorted(probs, reverse=True):
            raise EvalError("predicted_topk must be sorted by prob desc")


@dataclass
class ConfusionMatrix:
    n: int
    counts: np.ndarray  # (n, n) int64; rows = true, cols = predicted

    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    top1_accuracy: float
    topk_accuracy: dict[int, float]
    per_class: list[tuple[str, float | None, float | None, int]]  # label, P, R, support
    macro_precision: float | None
    macro_recall: float | None


def confusion_matrix(preds: list[LabeledPrediction], n: int) -> ConfusionMatrix:
    counts = np.zeros((n, n), dtype=np.int64)
    for p in preds:
        top1 = p.predicted_topk[0][0]
        if not (0 <= p.true_index < n and 0 <= top1 < n):
            raise EvalError(f"class index out of range for n={n}: "
                            f"true={p.true_index}, pred={top1}")
        counts[p.true_index][top1] += 1
    return ConfusionMatrix(n=n, counts=counts)


def accuracy(m: ConfusionMatrix) -> float:
    total = m.total()
    if total == 0:
        raise EvalError("accuracy of an empty matrix")
    return float(np.trace(m.counts)) / total


def precision_recall(m: ConfusionMatrix):
    """Per-class precision/recall plus macro averages.

    precision_c = counts[c][c] / column_sum_c, recall_c = counts[c][c] /
    row_sum_c; a zero denominator yields None and the class is excluded from
    the corresponding macro mean.
    """
    if m.total() == 0:
        raise EvalError("precision/recall of an empty matrix")
    col = m.counts.sum(axis=0)
    row = m.counts.sum(axis=1)
    precision: list[float | None] = []
    recall: list[float | None] = []
    for c in range(m.n):
        precision.append(float(m.counts[c][c]) / col[c] if col[c] > 0 else None)
        recall.append(float(m.counts[c][c]) / row[c] if row[c] > 0 else None)
    defined_p = [p for p in precision if p is not None]
    defined_r = [r for r in recall if r is not None]
    macro_p = sum(defined_p) / len(defined_p) if defined_p else None
    macro_r = sum(defined_r) / len(defined_r) if defined_r else None
    return precision, recall, macro_p, macro_r


def topk_accuracy(preds: list[LabeledPrediction], k: int) -> float:
    """Fraction of predictions whose true class is in the first min(k, len)
    topk entries."""
    if k < 1:
        raise EvalError(f"k must be >= 1, got {k}")
    if not preds:
        raise EvalError("topk_accuracy of an empty prediction set")
    hits = 0
    for p in preds:
        entries = p.predicted_topk[: min(k, len(p.predicted_topk))]
        if any(i == p.true_index for i, _ in entries):
            hits += 1
    return hits / len(preds)


def match_detections(preds: list[Detection], truths: list[BBox], iou_thr: float
                     ) -> tuple[int, int, int]:
    """Greedy fixed-threshold matching for one frame's boxes.

    Predictions in descending score order claim the unmatched truth of
    maximum IoU when that IoU is strictly above the threshold.  Returns
    (tp, fp, fn).
    """
    matched: set[int] = set()
    tp = 0
    for det in sorted(preds, key=lambda d: -d.score):
        best_j, best_iou = -1, 0.0
        for j, truth in enumerate(truths):
            if j in matched:
                continue
            v = iou(det.bbox, truth)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j >= 0 and best_iou > iou_thr:
            matched.add(best_j)
            tp += 1
    return tp, len(preds) - tp, len(truths) - tp


# --- Manifest-driven harness ---------------------------------------------------

def load_classification_manifest(path: str | Path) -> list[LabeledPrediction]:
    """JSONL of {"true_index": int, "topk": [[index, prob], ...]} lines."""
    preds = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                preds.append(LabeledPrediction(
                    true_index=int(d["true_index"]),
                    predicted_topk=tuple((int(i), float(p)) for i, p in d["topk"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise EvalError(f"{path} line {lineno}: {e}") from e
    if not preds:
        raise EvalError(f"{path}: empty manifest")
    return preds


def manifest_kind(path: str | Path) -> str:
    """Sniff whether a manifest holds classification or detection lines."""
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if "true_index" in d:
                return "classification"
            if "preds" in d or "truths" in d:
                return "detection"
            break
    raise EvalError(f"{path}: unrecognized manifest format")


def load_detection_manifest(path: str | Path) -> list[dict]:
    """JSONL of {"frame": id, "preds": [{bbox, score}], "truths": [bbox]}."""
    frames = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                frames.append({
                    "frame": d.get("frame", lineno),
                    "preds": [
                        Detection(bbox=BBox(*p["bbox"]), score=float(p["score"]),
                                  class_id=0)
                        for p in d.get("preds", [])
                    ],
                    "truths": [BBox(*b) for b in d.get("truths", [])],
                })
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise EvalError(f"{path} line {lineno}: {e}") from e
    if not frames:
        raise EvalError(f"{path}: empty manifest")
    return frames


def evaluate_classification(preds: list[LabeledPrediction], labels: tuple[str, ...],
                            ks: tuple[int, ...] = (1, 3, 5)) -> tuple[MetricsReport, ConfusionMatrix]:
    m = confusion_matrix(preds, len(labels))
    precision, recall, macro_p, macro_r = precision_recall(m)
    support = m.counts.sum(axis=1)
    per_class = [
        (labels[c], precision[c], recall[c], int(support[c]))
        for c in range(m.n)
    ]
    report = MetricsReport(
        top1_accuracy=accuracy(m),
        topk_accuracy={k: topk_accuracy(preds, k) for k in ks},
        per_class=per_class,
        macro_precision=macro_p,
        macro_recall=macro_r,
    )
    return report, m


def format_report(report: MetricsReport, n_preds: int) -> str:
    """Fixed-format text report for the CLI."""
    lines = [
        "== classification metrics ==",
        f"predictions     : {n_preds}",
        f"top-1 accuracy  : {report.top1_accuracy:.4f}",
    ]
    for k in sorted(report.topk_accuracy):
        if k == 1:
            continue
        lines.append(f"top-{k} accuracy  : {report.topk_accuracy[k]:.4f}")
    fmt = lambda v: "absent" if v is None else f"{v:.4f}"
    lines.append(f"macro precision : {fmt(report.macro_precision)}")
    lines.append(f"macro recall    : {fmt(report.macro_recall)}")
    lines.append("per-class (label precision recall support):")
    for label, p, r, support in report.per_class:
        if support == 0 and p is None:
            continue
        lines.append(f"  {label:<28} {fmt(p):>7} {fmt(r):>7} {support:>5}")
    return "\n".join(lines)


def write_outputs(report: MetricsReport, m: ConfusionMatrix,
                  labels: tuple[str, ...], out_dir: str | Path) -> tuple[Path, Path]:
    """Write metrics.json and confusion.csv (header row of labels, then n
    rows of integer cells)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps({
        "top1_accuracy": report.top1_accuracy,
        "topk_accuracy": {str(k): v for k, v in report.topk_accuracy.items()},
        "macro_precision": report.macro_precision,
        "macro_recall": report.macro_recall,
        "averaging": "macro",
        "per_class": [
            {"label": label, "precision": p, "recall": r, "support": s}
            for label, p, r, s in report.per_class
        ],
    }, indent=2) + "\n")
    csv_path = out / "confusion.csv"
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(",".join(labels) + "\n")
        for row in m.counts:
            f.write(",".join(str(int(v)) for v in row) + "\n")
    return metrics_path, csv_path


def evaluate_detections(frames: list[dict], iou_thr: float) -> dict:
    tp = fp = fn = 0
    for fr in frames:
        a, b, c = match_detections(fr["preds"], fr["truths"], iou_thr)
        tp, fp, fn = tp + a, fp + b, fn + c
    return {
        "frames": len(frames),
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "precision": tp / (tp + fp) if tp + fp else None,
        "recall": tp / (tp + fn) if tp + fn else None,
        "iou_threshold": iou_thr,
    }


def format_detection_report(res: dict) -> str:
    fmt = lambda v: "absent" if v is None else f"{v:.4f}"
    return "\n".join([
        "== detection matching ==",
        f"frames     : {res['frames']}",
        f"iou > {res['iou_threshold']}   : fixed-threshold greedy matching",
        f"tp/fp/fn   : {res['tp']}/{res['fp']}/{res['fn']}",
        f"precision  : {fmt(res['precision'])}",
        f"recall     : {fmt(res['recall'])}",
    ])

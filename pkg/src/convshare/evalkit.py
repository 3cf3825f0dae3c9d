"""Detection scoring: IoU matching, precision/recall/F and relative gains."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .tensorcore import DetectionBox


@dataclass
class MatchResult:
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    pairs: list[tuple[int, int, float]] = field(default_factory=list)


@dataclass(frozen=True)
class PRF:
    """Precision, recall and F-score, all in percent."""

    precision: float
    recall: float
    f_score: float


def iou(a: DetectionBox, b: DetectionBox) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def match_detections(dets, gts, iou_tau: float = 0.5) -> MatchResult:
    """Confidence-greedy one-to-one matching at IoU >= ``iou_tau``."""
    if not 0 < iou_tau <= 1:
        raise ValueError("iou_tau must be in (0, 1]")
    order = sorted(range(len(dets)), key=lambda k: (-dets[k].confidence, dets[k].y, dets[k].x, k))
    taken = [False] * len(gts)
    result = MatchResult()
    for d in order:
        best, best_iou = -1, -1.0
        for g, gt in enumerate(gts):
            if taken[g]:
                continue
            v = iou(dets[d], gt)
            if v >= iou_tau and v > best_iou:
                best, best_iou = g, v
        if best >= 0:
            taken[best] = True
            result.pairs.append((d, best, best_iou))
    result.true_positives = len(result.pairs)
    result.false_positives = len(dets) - result.true_positives
    result.false_negatives = len(gts) - result.true_positives
    return result


def prf_from_counts(tp: int, fp: int, fn: int) -> PRF:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return PRF(100 * p, 100 * r, 100 * f)


def f_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def prf_metrics(results) -> PRF:
    """Micro-average over frames."""
    results = list(results)
    if not results:
        raise ValueError("at least one frame is required")
    tp = sum(r.true_positives for r in results)
    fp = sum(r.false_positives for r in results)
    fn = sum(r.false_negatives for r in results)
    return prf_from_counts(tp, fp, fn)


def relative_gain(collab: float, baseline: float) -> float:
    if baseline <= 0:
        raise ValueError("baseline must be positive")
    return 100.0 * (collab - baseline) / baseline


def evaluate(detections: dict, ground_truth: dict, iou_tau: float = 0.5) -> PRF:
    """Score per-frame detections against per-frame ground truth (frames keyed by id)."""
    frames = sorted(set(ground_truth) | set(detections))
    return prf_metrics(match_detections(detections.get(f, []), ground_truth.get(f, []), iou_tau)
                       for f in frames)


def emit_table(baseline: PRF, configs: dict[str, PRF] | None = None) -> str:
    configs = configs or {}
    names = list(configs)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "baseline", *names])
    metrics = [("precision", "Precision"), ("recall", "Recall"), ("f_score", "F-score")]
    for attr, label in metrics:
        writer.writerow([label, f"{getattr(baseline, attr):.2f}",
                         *(f"{getattr(configs[n], attr):.2f}" for n in names)])
    if names:
        for attr, label in metrics:
            base = getattr(baseline, attr)
            cells = [f"{relative_gain(getattr(configs[n], attr), base):.2f}" if base > 0 else "nan"
                     for n in names]
            writer.writerow([f"{label} (Gain)", "", *cells])
    return buf.getvalue()

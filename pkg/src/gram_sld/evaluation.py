"""Detection quality metrics: IoU, per-class average precision, mAP.

Average precision follows the all-point interpolation: detections are
ranked by descending confidence, each is greedily matched to the best
same-class ground-truth box of its sample at IoU >= the threshold, and
the area under the precision envelope of the resulting PR curve is the
class AP. mAP averages over the classes present in the ground truth;
classes that appear only in predictions contribute false positives to
their own (absent) class and are excluded from the mean.

Evaluation of a co-trained pair reports both heads and a headline score,
the better head's mAP: the pair is deployed as "use the stronger head",
so that is the number that matters downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence

from .data_model import BoundingBox

DEFAULT_IOU_THRESHOLD = 0.5


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; disjoint boxes give 0.0."""
    ix_min = max(a.x_min, b.x_min)
    iy_min = max(a.y_min, b.y_min)
    ix_max = min(a.x_max, b.x_max)
    iy_max = min(a.y_max, b.y_max)
    iw = ix_max - ix_min
    ih = iy_max - iy_min
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def greedy_match_count(
    predictions: Sequence[BoundingBox],
    ground_truth: Sequence[BoundingBox],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> int:
    """One-to-one greedy count of predictions matching same-class GT boxes.

    Pairs are taken in descending IoU order (ties by list positions) and
    must reach the threshold. Used wherever label agreement with a
    reference set is measured, e.g. pseudo-label precision.
    """
    candidates = []
    for i, pb in enumerate(predictions):
        for j, gb in enumerate(ground_truth):
            if pb.class_name != gb.class_name:
                continue
            v = iou(pb, gb)
            if v >= iou_threshold:
                candidates.append((v, i, j))
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p, used_g = set(), set()
    matched = 0
    for _, i, j in candidates:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        matched += 1
    return matched


def average_precision(recalls: Sequence[float], precisions: Sequence[float]) -> float:
    """Area under the precision envelope of a PR curve.

    The inputs are the cumulative recall/precision values in rank order.
    The envelope replaces each precision with the maximum at equal or
    higher recall, then the area is summed over recall increments.
    """
    if len(recalls) != len(precisions):
        raise ValueError("recall/precision length mismatch")
    if not recalls:
        return 0.0
    env: List[float] = [0.0] * len(precisions)
    best = 0.0
    for i in range(len(precisions) - 1, -1, -1):
        best = max(best, precisions[i])
        env[i] = best
    area = 0.0
    prev_r = 0.0
    for r, p in zip(recalls, env):
        area += (r - prev_r) * p
        prev_r = r
    return area


@dataclass(frozen=True)
class ClassMetrics:
    ap: float
    n_gt: int
    tp: int
    fp: int
    fn: int

    def to_json(self) -> dict:
        return {"ap": self.ap, "n_gt": self.n_gt, "tp": self.tp, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class EvalResult:
    """Per-class metrics plus their mean for one detector head."""

    per_class: Dict[str, ClassMetrics] = field(default_factory=dict)

    @property
    def map(self) -> float:
        if not self.per_class:
            return 0.0
        return sum(m.ap for m in self.per_class.values()) / len(self.per_class)

    def to_json(self) -> dict:
        return {
            "map": self.map,
            "per_class": {c: m.to_json() for c, m in sorted(self.per_class.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalResult":
        per_class = {
            c: ClassMetrics(ap=m["ap"], n_gt=m["n_gt"], tp=m["tp"], fp=m["fp"], fn=m["fn"])
            for c, m in obj["per_class"].items()
        }
        return cls(per_class=per_class)


def evaluate(
    predictions: Mapping[str, Sequence[BoundingBox]],
    ground_truth: Mapping[str, Sequence[BoundingBox]],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> EvalResult:
    """Score predictions against ground truth at a fixed IoU threshold.

    Both mappings go from sample id to boxes. Ranking ties on confidence
    break by sample id, then by the box's position in its sample's list,
    so evaluation is order-independent and reproducible.
    """
    classes = sorted({b.class_name for boxes in ground_truth.values() for b in boxes})
    gt_by_class: Dict[str, Dict[str, List[BoundingBox]]] = {c: {} for c in classes}
    for sid, boxes in ground_truth.items():
        for box in boxes:
            gt_by_class[box.class_name].setdefault(sid, []).append(box)

    det_by_class: Dict[str, List[tuple[float, str, int, BoundingBox]]] = {c: [] for c in classes}
    for sid in sorted(predictions):
        for idx, box in enumerate(predictions[sid]):
            if box.class_name in det_by_class:
                det_by_class[box.class_name].append((box.confidence, sid, idx, box))

    per_class: Dict[str, ClassMetrics] = {}
    for cls_name in classes:
        gt_map = gt_by_class[cls_name]
        n_gt = sum(len(v) for v in gt_map.values())
        dets = sorted(det_by_class[cls_name], key=lambda t: (-t[0], t[1], t[2]))
        matched: Dict[str, List[bool]] = {sid: [False] * len(v) for sid, v in gt_map.items()}
        tp_flags: List[int] = []
        for _, sid, _, box in dets:
            candidates = gt_map.get(sid, [])
            best_iou = 0.0
            best_j = -1
            for j, gt_box in enumerate(candidates):
                if matched[sid][j]:
                    continue
                v = iou(box, gt_box)
                if v > best_iou:
                    best_iou = v
                    best_j = j
            if best_j >= 0 and best_iou >= iou_threshold:
                matched[sid][best_j] = True
                tp_flags.append(1)
            else:
                tp_flags.append(0)
        tp_cum = 0
        recalls: List[float] = []
        precisions: List[float] = []
        for rank, flag in enumerate(tp_flags, start=1):
            tp_cum += flag
            recalls.append(tp_cum / n_gt if n_gt else 0.0)
            precisions.append(tp_cum / rank)
        tp_total = tp_cum
        fp_total = len(tp_flags) - tp_total
        per_class[cls_name] = ClassMetrics(
            ap=average_precision(recalls, precisions) if n_gt else 0.0,
            n_gt=n_gt,
            tp=tp_total,
            fp=fp_total,
            fn=n_gt - tp_total,
        )
    return EvalResult(per_class=per_class)


@dataclass(frozen=True)
class HeadEvaluation:
    """Joint result for a co-trained pair; headline is the better head's mAP."""

    head1: EvalResult
    head2: EvalResult

    @property
    def better_head(self) -> int:
        # Equal scores prefer head 1 for a stable report.
        return 1 if self.head1.map >= self.head2.map else 2

    @property
    def headline_map(self) -> float:
        return max(self.head1.map, self.head2.map)

    def to_json(self) -> dict:
        return {
            "head1": self.head1.to_json(),
            "head2": self.head2.to_json(),
            "better_head": self.better_head,
            "headline_map": self.headline_map,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "HeadEvaluation":
        return cls(
            head1=EvalResult.from_json(obj["head1"]),
            head2=EvalResult.from_json(obj["head2"]),
        )


def evaluate_heads(
    predictions1: Mapping[str, Sequence[BoundingBox]],
    predictions2: Mapping[str, Sequence[BoundingBox]],
    ground_truth: Mapping[str, Sequence[BoundingBox]],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> HeadEvaluation:
    return HeadEvaluation(
        head1=evaluate(predictions1, ground_truth, iou_threshold),
        head2=evaluate(predictions2, ground_truth, iou_threshold),
    )


def diff_metrics(a: EvalResult, b: EvalResult) -> dict:
    """Metric deltas a minus b, e.g. reduced-supervision run vs its baseline."""
    classes = sorted(set(a.per_class) | set(b.per_class))
    per_class = {}
    for c in classes:
        ap_a = a.per_class[c].ap if c in a.per_class else 0.0
        ap_b = b.per_class[c].ap if c in b.per_class else 0.0
        per_class[c] = ap_a - ap_b
    return {"map_diff": a.map - b.map, "per_class_ap_diff": per_class}


def save_evaluation(result: HeadEvaluation, path: str | Path) -> None:
    """Write eval.json: the better head's per-class APs, its mAP, and which
    head ("d1" or "d2") produced them."""
    better = result.head1 if result.better_head == 1 else result.head2
    payload = {
        "per_class": {c: m.ap for c, m in sorted(better.per_class.items())},
        "map": better.map,
        "head": "d1" if result.better_head == 1 else "d2",
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_evaluation(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))

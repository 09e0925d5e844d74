"""Cross-head agreement scoring and self-label promotion.

Each co-training iteration both heads predict on the remaining unlabeled
pool. Per sample, predictions of the same class are matched one-to-one
across heads by greedy IoU (zero-overlap pairs are discarded), and the
sample's score counts the matched pairs on which the heads strictly
agree: both confidences above delta_acc and the pair IoU above delta_iou.
A sample is promoted to the self-labeled set when its score strictly
exceeds its cluster's threshold, beta times the cluster's mean score, so
promotion is relative to how well the heads are doing on similar scenes
rather than to a global constant. Promoted samples take one box per
agreeing pair, from whichever head was the more confident on it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence

from .data_model import BoundingBox
from .evaluation import iou


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class ScoringConfig:
    """Agreement thresholds; all comparisons against them are strict."""

    delta_acc: float = 0.9
    delta_iou: float = 0.75
    beta: float = 1.0
    termination_fraction: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.delta_acc <= 1.0:
            raise ScoringError(f"delta_acc must be in [0, 1], got {self.delta_acc}")
        if not 0.0 <= self.delta_iou <= 1.0:
            raise ScoringError(f"delta_iou must be in [0, 1], got {self.delta_iou}")
        if self.beta <= 0:
            raise ScoringError(f"beta must be positive, got {self.beta}")
        if not 0.0 <= self.termination_fraction < 1.0:
            raise ScoringError(
                f"termination_fraction must be in [0, 1), got {self.termination_fraction}"
            )

    def to_json(self) -> dict:
        return {
            "delta_acc": self.delta_acc,
            "delta_iou": self.delta_iou,
            "beta": self.beta,
            "termination_fraction": self.termination_fraction,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScoringConfig":
        return cls(**{k: obj[k] for k in obj})


@dataclass(frozen=True)
class MatchedPair:
    box1: BoundingBox
    box2: BoundingBox
    iou: float

    def agrees(self, cfg: ScoringConfig) -> bool:
        return (
            self.box1.confidence > cfg.delta_acc
            and self.box2.confidence > cfg.delta_acc
            and self.iou > cfg.delta_iou
        )

    @property
    def better_box(self) -> BoundingBox:
        # Confidence tie keeps head 1 for determinism.
        return self.box1 if self.box1.confidence >= self.box2.confidence else self.box2


def match_pairs(
    boxes1: Sequence[BoundingBox], boxes2: Sequence[BoundingBox]
) -> List[MatchedPair]:
    """One-to-one greedy IoU matching of same-class boxes across heads.

    Candidate pairs are ranked by descending IoU, ties by the boxes'
    positions in their input lists; each box is used at most once and
    pairs with zero overlap never match. Greedy almost always agrees
    with the optimal one-to-one assignment at detection-like box counts,
    and its total IoU is never below half the optimal total (the usual
    greedy matching guarantee).
    """
    candidates: List[tuple[float, int, int]] = []
    for i, b1 in enumerate(boxes1):
        for j, b2 in enumerate(boxes2):
            if b1.class_name != b2.class_name:
                continue
            v = iou(b1, b2)
            if v > 0.0:
                candidates.append((v, i, j))
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
    used1 = set()
    used2 = set()
    pairs: List[MatchedPair] = []
    for v, i, j in candidates:
        if i in used1 or j in used2:
            continue
        used1.add(i)
        used2.add(j)
        pairs.append(MatchedPair(box1=boxes1[i], box2=boxes2[j], iou=v))
    return pairs


def score_sample(
    boxes1: Sequence[BoundingBox], boxes2: Sequence[BoundingBox], cfg: ScoringConfig
) -> tuple[int, List[MatchedPair]]:
    """Sample score (count of agreeing pairs) and all matched pairs."""
    pairs = match_pairs(boxes1, boxes2)
    return sum(1 for p in pairs if p.agrees(cfg)), pairs


def cluster_thresholds(
    scores: Mapping[str, int], cluster_of: Mapping[str, int], beta: float
) -> Dict[int, float]:
    """Per-cluster sigma = beta * mean score over that cluster's scored samples."""
    sums: Dict[int, float] = {}
    counts: Dict[int, int] = {}
    for sid, sc in scores.items():
        k = cluster_of[sid]
        sums[k] = sums.get(k, 0.0) + sc
        counts[k] = counts.get(k, 0) + 1
    return {k: beta * sums[k] / counts[k] for k in sums}


def confident_samples(
    scores: Mapping[str, int],
    cluster_of: Mapping[str, int],
    thresholds: Mapping[int, float],
) -> List[str]:
    """Ids whose score strictly beats their cluster threshold, sorted."""
    return sorted(
        sid for sid, sc in scores.items() if sc > thresholds[cluster_of[sid]]
    )


def merged_boxes(pairs: Iterable[MatchedPair], cfg: ScoringConfig) -> List[BoundingBox]:
    """Committed labels for a promoted sample: the agreeing pairs' better boxes."""
    out: List[BoundingBox] = []
    for pair in pairs:
        if pair.agrees(cfg):
            best = pair.better_box
            out.append(
                BoundingBox(
                    x_min=best.x_min,
                    y_min=best.y_min,
                    x_max=best.x_max,
                    y_max=best.y_max,
                    class_name=best.class_name,
                    confidence=best.confidence,
                    source="self",
                )
            )
    return out


def should_terminate(
    remaining: int, initial: int, added: int, cfg: ScoringConfig
) -> tuple[bool, str]:
    """Loop exit test: pool exhausted below the fraction, or a stalled pass."""
    if initial <= 0:
        return True, "empty_pool"
    if remaining < cfg.termination_fraction * initial:
        return True, "exhausted"
    if added == 0:
        return True, "stalled"
    return False, ""


@dataclass(frozen=True)
class IterationScores:
    """Everything the scoring pass of one iteration produced.

    Serialized as scores.json with per-cluster thresholds under "sigma"
    and the promoted sample ids under "added".
    """

    iteration: int
    scores: Dict[str, int]
    thresholds: Dict[int, float]
    promoted: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "scores": dict(sorted(self.scores.items())),
            "sigma": {str(k): v for k, v in sorted(self.thresholds.items())},
            "added": list(self.promoted),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "IterationScores":
        return cls(
            iteration=int(obj["iteration"]),
            scores={k: int(v) for k, v in obj["scores"].items()},
            thresholds={int(k): float(v) for k, v in obj["sigma"].items()},
            promoted=tuple(obj["added"]),
        )


def save_scores(table: IterationScores, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(table.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_scores(path: str | Path) -> IterationScores:
    return IterationScores.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

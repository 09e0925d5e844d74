"""Key-sample selection: cluster-wise top-entropy picks under a ratio budget.

Each cluster contributes its ceil(ratio * N_k) highest-entropy samples, so
the total lands in [ceil(ratio * N), ceil(ratio * N) + K]. The per-cluster
ceiling (rather than a single global round) is what makes sparse clusters
still contribute at least one key sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

from .clustering import ClusterModel


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionConfig:
    ratio: float = 0.05
    per_cluster_cap: Optional[int] = None

    def __post_init__(self):
        if not (0.0 < self.ratio <= 1.0):
            raise SelectionError(f"ratio {self.ratio} outside (0, 1]")
        if self.per_cluster_cap is not None and self.per_cluster_cap < 1:
            raise SelectionError("per_cluster_cap must be >= 1")


@dataclass
class KeySet:
    """Selected sample ids per cluster, highest entropy first."""

    ratio: float
    clusters: dict[int, tuple[str, ...]]

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.clusters.values())

    def all_ids(self) -> list[str]:
        out: list[str] = []
        for c in sorted(self.clusters):
            out.extend(self.clusters[c])
        return out

    def to_json(self) -> dict:
        return {
            "ratio": self.ratio,
            "clusters": {str(c): list(v) for c, v in sorted(self.clusters.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KeySet":
        return cls(
            ratio=float(obj["ratio"]),
            clusters={int(c): tuple(v) for c, v in obj["clusters"].items()},
        )


def select_keys(
    model: ClusterModel,
    entropies: Mapping[str, float],
    cfg: SelectionConfig,
) -> KeySet:
    """Pick the top-ceil(ratio*N_k) samples by entropy within each cluster.

    Entropy ties break lexicographically by sample id, so the result is
    deterministic. Every sample in the model must have an entropy.
    """
    if len(model.ids) == 0:
        raise SelectionError("empty cluster model")
    missing = [sid for sid in model.ids if sid not in entropies]
    if missing:
        raise SelectionError(f"missing entropy for {missing[:5]}")

    clusters: dict[int, tuple[str, ...]] = {}
    for cluster_id in sorted(model.sizes):
        members = model.members(cluster_id)
        m_k = min(math.ceil(cfg.ratio * len(members)), len(members))
        if cfg.per_cluster_cap is not None:
            m_k = min(m_k, cfg.per_cluster_cap)
        ranked = sorted(members, key=lambda sid: (-entropies[sid], sid))
        clusters[cluster_id] = tuple(ranked[:m_k])
    return KeySet(ratio=cfg.ratio, clusters=clusters)


def save_keyset(keyset: KeySet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(keyset.to_json(), fh, sort_keys=True, indent=2)


def load_keyset(path: str | Path) -> KeySet:
    with open(path, "r", encoding="utf-8") as fh:
        return KeySet.from_json(json.load(fh))

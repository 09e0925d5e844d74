"""Agglomerative clustering of color histograms and best-K selection.

Ward linkage on Euclidean distance, implemented directly so tie-breaking
is fully deterministic: when several pairs are equally close, the pair
with the lexicographically lowest cluster ids merges first. K-means is
deliberately not offered; the dendrogram is cut at every candidate K and
the Calinski-Harabasz index picks the winner (ties toward smaller K).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class MergeStep:
    cluster_a: int
    cluster_b: int
    distance: float
    size: int  # members in the merged cluster


@dataclass
class Dendrogram:
    """Merge history over N leaves: exactly N-1 steps, new ids N, N+1, ..."""

    n_leaves: int
    merges: tuple[MergeStep, ...]

    def __post_init__(self):
        if len(self.merges) != self.n_leaves - 1:
            raise ClusteringError(
                f"{self.n_leaves} leaves need {self.n_leaves - 1} merges, "
                f"got {len(self.merges)}"
            )


def _pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def agglomerate(descriptors: Sequence[np.ndarray] | np.ndarray) -> Dendrogram:
    """Ward-linkage dendrogram over descriptor vectors.

    Deterministic under fixed input: the minimum-distance pair is searched
    in row-major order over ascending cluster ids, so equal distances
    resolve to the lowest id pair.
    """
    x = np.asarray(descriptors, dtype=np.float64)
    if x.ndim != 2:
        raise ClusteringError(f"descriptors must be 2-D, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise ClusteringError("need at least 2 descriptors")

    # Active clusters kept in ascending id order; new ids n+step always
    # append at the end, which preserves the ordering invariant.
    dist = np.sqrt(_pairwise_sq_dists(x))
    np.fill_diagonal(dist, np.inf)
    ids = list(range(n))
    sizes = np.ones(n, dtype=np.float64)
    merges: list[MergeStep] = []

    for step in range(n - 1):
        k = dist.shape[0]
        iu = np.triu_indices(k, 1)
        flat = dist[iu]
        # argmin returns the first occurrence: lowest (i, j) in id order.
        pos = int(np.argmin(flat))
        i, j = int(iu[0][pos]), int(iu[1][pos])
        d_ij = float(flat[pos])
        ni, nj = sizes[i], sizes[j]
        new_id = n + step
        new_size = ni + nj

        # Lance-Williams update for Ward linkage.
        keep = [m for m in range(k) if m not in (i, j)]
        if keep:
            nk = sizes[keep]
            d_vi = dist[keep, i]
            d_vj = dist[keep, j]
            num = (nk + ni) * d_vi**2 + (nk + nj) * d_vj**2 - nk * d_ij**2
            d_new = np.sqrt(np.maximum(num / (nk + ni + nj), 0.0))
        merges.append(MergeStep(ids[i], ids[j], d_ij, int(new_size)))

        sub = dist[np.ix_(keep, keep)]
        k2 = len(keep)
        nxt = np.full((k2 + 1, k2 + 1), np.inf)
        nxt[:k2, :k2] = sub
        if keep:
            nxt[:k2, k2] = d_new
            nxt[k2, :k2] = d_new
        dist = nxt
        sizes = np.append(sizes[keep], new_size)
        ids = [ids[m] for m in keep] + [new_id]

    return Dendrogram(n_leaves=n, merges=tuple(merges))


def cut(dendrogram: Dendrogram, k: int) -> np.ndarray:
    """Partition into *k* clusters by applying the first N-k merges.

    Labels are canonical: clusters numbered 0..k-1 in order of their
    smallest member index.
    """
    n = dendrogram.n_leaves
    if not (1 <= k <= n):
        raise ClusteringError(f"k={k} outside [1, {n}]")
    label = np.arange(n + len(dendrogram.merges))
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    for step, m in enumerate(dendrogram.merges[: n - k]):
        new_id = n + step
        merged = members.pop(m.cluster_a) + members.pop(m.cluster_b)
        members[new_id] = merged
    out = np.empty(n, dtype=np.int64)
    order = sorted(members.values(), key=min)
    for canonical, mem in enumerate(order):
        out[mem] = canonical
    return out


def calinski_harabasz(
    descriptors: Sequence[np.ndarray] | np.ndarray, labels: Sequence[int] | np.ndarray
) -> float:
    """Ratio of between- to within-cluster dispersion about centroids.

    Returns +inf as a degenerate sentinel when the within-dispersion is
    exactly zero (singleton clusters everywhere, or all points identical).
    """
    x = np.asarray(descriptors, dtype=np.float64)
    lab = np.asarray(labels)
    n = x.shape[0]
    uniq = np.unique(lab)
    k = len(uniq)
    if k < 2:
        raise ClusteringError("need at least 2 clusters")
    if k > n:
        raise ClusteringError("more clusters than points")
    mean = x.mean(axis=0)
    within = 0.0
    between = 0.0
    for c in uniq:
        pts = x[lab == c]
        if len(pts) == 0:
            raise ClusteringError(f"empty cluster {c}")
        centroid = pts.mean(axis=0)
        within += float(((pts - centroid) ** 2).sum())
        between += len(pts) * float(((centroid - mean) ** 2).sum())
    if within == 0.0:
        return math.inf
    return (between / (k - 1)) / (within / (n - k))


@dataclass
class ClusterModel:
    """Chosen partition plus the CH sweep that justified it."""

    k: int
    labels: np.ndarray
    ids: tuple[str, ...]
    ch_scores: dict[int, float]
    forced: bool = False

    @property
    def assignments(self) -> dict[str, int]:
        return {sid: int(c) for sid, c in zip(self.ids, self.labels)}

    @property
    def sizes(self) -> dict[int, int]:
        vals, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}

    def members(self, cluster_id: int) -> list[str]:
        return [sid for sid, c in zip(self.ids, self.labels) if int(c) == cluster_id]

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "forced": self.forced,
            "ch_scores": {str(k): v for k, v in sorted(self.ch_scores.items())},
            "assignments": dict(sorted(self.assignments.items())),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClusterModel":
        assignments = obj["assignments"]
        ids = tuple(sorted(assignments))
        labels = np.array([assignments[i] for i in ids], dtype=np.int64)
        return cls(
            k=int(obj["k"]),
            labels=labels,
            ids=ids,
            ch_scores={int(k): float(v) for k, v in obj["ch_scores"].items()},
            forced=bool(obj.get("forced", False)),
        )


def select_k(
    dendrogram: Dendrogram,
    descriptors: Sequence[np.ndarray] | np.ndarray,
    k_min: int,
    k_max: int,
    ids: Optional[Sequence[str]] = None,
    force_k: Optional[int] = None,
) -> ClusterModel:
    """Cut at every K in [k_min, k_max], score with CH, keep the argmax.

    Ties break toward smaller K. *force_k* overrides the argmax (the CH
    sweep is still computed and reported) for runs that pin the cluster
    count externally.
    """
    n = dendrogram.n_leaves
    if not (2 <= k_min <= k_max <= n - 1):
        raise ClusteringError(f"invalid K range [{k_min}, {k_max}] for {n} points")
    x = np.asarray(descriptors, dtype=np.float64)
    if x.shape[0] != n:
        raise ClusteringError("descriptor count does not match dendrogram")
    if ids is None:
        ids = tuple(str(i) for i in range(n))
    ids = tuple(ids)

    ch_scores: dict[int, float] = {}
    for k in range(k_min, k_max + 1):
        ch_scores[k] = calinski_harabasz(x, cut(dendrogram, k))

    if force_k is not None:
        if not (2 <= force_k <= n - 1):
            raise ClusteringError(f"forced k={force_k} outside [2, {n - 1}]")
        best = force_k
    else:
        best = min(ch_scores, key=lambda k: (-ch_scores[k], k))
    return ClusterModel(
        k=best,
        labels=cut(dendrogram, best),
        ids=ids,
        ch_scores=ch_scores,
        forced=force_k is not None,
    )


def save_cluster_model(model: ClusterModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh, sort_keys=True, indent=2)


def load_cluster_model(path: str | Path) -> ClusterModel:
    with open(path, "r", encoding="utf-8") as fh:
        return ClusterModel.from_json(json.load(fh))

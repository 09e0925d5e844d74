"""Gram-matrix kernels: the head-independence loss and its exact gradients.

A feature map is either convolutional (an M x N x C tensor, one 2-D map
per channel) or fully connected (a length-C vector). Its gram matrix G is
the C x C table of channel combinations: Frobenius inner products of the
channel maps for the convolutional kind, plain scalar products for the
fully connected kind. The independence loss between two heads is the
reciprocal of the mean squared difference of their gram matrices, so
gradient descent on it drives the two representations apart.

All kernels are pure, double precision, and return closed-form gradients;
no autodiff engine is involved. Entry (i, j) is computed as a fixed-order
sum of elementwise products, which makes symmetry and channel-permutation
equivariance exact at the bit level, not just up to rounding.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

CONVOLUTIONAL = "convolutional"
FULLY_CONNECTED = "fully_connected"

#: Additive guard in the reciprocal: identical heads give a finite loss of 1/EPS.
EPS = 1e-8


class GramError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureMap:
    """A detector head's feature tensor for one region of interest."""

    kind: str
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", arr)
        if self.kind == CONVOLUTIONAL:
            if arr.ndim != 3:
                raise GramError(f"convolutional feature must be 3-D, got {arr.shape}")
        elif self.kind == FULLY_CONNECTED:
            if arr.ndim != 1:
                raise GramError(f"fully connected feature must be 1-D, got {arr.shape}")
        else:
            raise GramError(f"unknown feature kind {self.kind!r}")
        if arr.size == 0:
            raise GramError("empty feature map")
        if not np.all(np.isfinite(arr)):
            raise GramError("non-finite entries in feature map")

    @property
    def channels(self) -> int:
        return int(self.data.shape[-1])

    @classmethod
    def conv(cls, data) -> "FeatureMap":
        return cls(CONVOLUTIONAL, np.asarray(data, dtype=np.float64))

    @classmethod
    def fc(cls, data) -> "FeatureMap":
        return cls(FULLY_CONNECTED, np.asarray(data, dtype=np.float64))


def gram(feature: FeatureMap, spatial_normalize: bool = True) -> np.ndarray:
    """C x C gram matrix of a feature map.

    Convolutional entries are Frobenius inner products of channel maps,
    divided by M*N when *spatial_normalize* is on (the default) so that
    magnitudes stay comparable across region sizes. Fully connected
    entries are products of the vector components.
    """
    if feature.kind == FULLY_CONNECTED:
        f = feature.data
        return np.outer(f, f)
    m, n, c = feature.data.shape
    scale = float(m * n) if spatial_normalize else 1.0
    flat = feature.data.reshape(m * n, c)
    g = np.empty((c, c), dtype=np.float64)
    for i in range(c):
        for j in range(i, c):
            # Fixed-order sum of commutative products: bitwise symmetric
            # and channel-permutation equivariant.
            v = float(np.sum(flat[:, i] * flat[:, j]))
            g[i, j] = v
            g[j, i] = v
    if scale != 1.0:
        g /= scale
    return g


def gram_loss(
    f1: FeatureMap,
    f2: FeatureMap,
    eps: float = EPS,
    spatial_normalize: bool = True,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Independence loss between two heads and its exact gradients.

    Returns ``(value, grad_f1, grad_f2)`` where
    ``value = 1 / (mse(G1, G2) + eps)`` and the mse averages over all C^2
    gram entries. The gradients are the closed-form derivatives of the
    value with respect to every entry of ``f1`` and ``f2``; identical
    inputs hit the guard and give value ``1/eps`` with zero gradients.
    """
    if f1.kind != f2.kind:
        raise GramError(f"kind mismatch: {f1.kind} vs {f2.kind}")
    if f1.data.shape != f2.data.shape:
        raise GramError(f"shape mismatch: {f1.data.shape} vs {f2.data.shape}")

    g1 = gram(f1, spatial_normalize)
    g2 = gram(f2, spatial_normalize)
    c = f1.channels
    diff = g1 - g2
    mse = float(np.mean(diff * diff))
    value = 1.0 / (mse + eps)

    # d(mse)/dF = (4 / (C^2 * s)) * F @ diff, with s the spatial scale;
    # the chain through the reciprocal contributes -value^2.
    coeff = 4.0 / (c * c)
    if f1.kind == FULLY_CONNECTED:
        d_mse_d1 = coeff * (diff @ f1.data)
        d_mse_d2 = -coeff * (diff @ f2.data)
    else:
        m, n, _ = f1.data.shape
        scale = float(m * n) if spatial_normalize else 1.0
        d_mse_d1 = (coeff / scale) * (f1.data.reshape(m * n, c) @ diff).reshape(f1.data.shape)
        d_mse_d2 = (-coeff / scale) * (f2.data.reshape(m * n, c) @ diff).reshape(f2.data.shape)
    grad_f1 = -(value * value) * d_mse_d1
    grad_f2 = -(value * value) * d_mse_d2
    return value, grad_f1, grad_f2


def mean_gram_loss(
    pairs: Sequence[tuple[FeatureMap, FeatureMap]],
    eps: float = EPS,
    spatial_normalize: bool = True,
) -> float:
    """Average gram loss over region pairs (one pair per ROI)."""
    if not pairs:
        raise GramError("no feature pairs")
    return float(
        np.mean([gram_loss(a, b, eps, spatial_normalize)[0] for a, b in pairs])
    )


@dataclass(frozen=True)
class LossReport:
    """Training-step loss breakdown; the detector losses are opaque scalars."""

    loss_d1: float
    loss_d2: float
    gram_loss: float
    alpha: float
    total: float

    def to_json(self) -> dict:
        return {
            "loss_d1": self.loss_d1,
            "loss_d2": self.loss_d2,
            "gram_loss": self.gram_loss,
            "alpha": self.alpha,
            "total": self.total,
        }


def total_loss(loss_d1: float, loss_d2: float, gram_value: float, alpha: float) -> LossReport:
    """Combine detector losses with the weighted gram term."""
    if alpha < 0:
        raise GramError(f"alpha must be >= 0, got {alpha}")
    return LossReport(
        loss_d1=float(loss_d1),
        loss_d2=float(loss_d2),
        gram_loss=float(gram_value),
        alpha=float(alpha),
        total=float(loss_d1) + float(loss_d2) + alpha * float(gram_value),
    )


class AlphaPolicy:
    """Weight of the gram term in the total loss.

    ``fixed`` uses a constant. ``auto`` calibrates once, on the first
    report, so that alpha * gram equals *fraction* of the detection loss,
    then freezes; this keeps the two loss parts on comparable scales
    without hand tuning.
    """

    def __init__(self, mode: str = "auto", value: float = 0.0, fraction: float = 0.1):
        if mode not in ("fixed", "auto"):
            raise GramError(f"unknown alpha mode {mode!r}")
        if mode == "fixed" and value < 0:
            raise GramError("fixed alpha must be >= 0")
        self.mode = mode
        self.fraction = fraction
        self._alpha: Optional[float] = value if mode == "fixed" else None

    @property
    def alpha(self) -> Optional[float]:
        return self._alpha

    def resolve(self, loss_d1: float, loss_d2: float, gram_value: float) -> float:
        if self._alpha is None:
            if gram_value <= 0:
                raise GramError("gram value must be positive for auto calibration")
            self._alpha = self.fraction * (loss_d1 + loss_d2) / gram_value
        return self._alpha

    def restore(self, alpha: float) -> None:
        """Reinstate a previously calibrated alpha (journal replay)."""
        self._alpha = float(alpha)

    def to_json(self) -> dict:
        if self.mode == "fixed":
            return {"mode": "fixed", "value": self._alpha}
        return {"mode": "auto", "fraction": self.fraction}

    @classmethod
    def from_json(cls, obj: dict) -> "AlphaPolicy":
        if obj.get("mode", "auto") == "fixed":
            return cls(mode="fixed", value=float(obj.get("value", 0.0)))
        return cls(mode="auto", fraction=float(obj.get("fraction", 0.1)))


def gram_difference(f1: FeatureMap, f2: FeatureMap, spatial_normalize: bool = True) -> np.ndarray:
    """Entrywise |G1 - G2|, the matrix behind the independence heat map."""
    if f1.data.shape != f2.data.shape or f1.kind != f2.kind:
        raise GramError("feature maps must share kind and shape")
    return np.abs(gram(f1, spatial_normalize) - gram(f2, spatial_normalize))


def gram_diff_export(
    f1: FeatureMap,
    f2: FeatureMap,
    out_csv: str | Path,
    out_pgm: Optional[str | Path] = None,
    spatial_normalize: bool = True,
) -> np.ndarray:
    """Write |G1 - G2| as CSV and optionally as an 8-bit grayscale PGM.

    The PGM is max-scaled: the largest entry maps to 255 (an all-zero
    matrix stays all zero). Returns the difference matrix.
    """
    diff = gram_difference(f1, f2, spatial_normalize)
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in diff:
            writer.writerow([repr(float(v)) for v in row])
    if out_pgm is not None:
        peak = float(diff.max())
        if peak > 0:
            pixels = np.rint(diff / peak * 255.0).astype(np.int64)
        else:
            pixels = np.zeros_like(diff, dtype=np.int64)
        lines = ["P2", f"{diff.shape[1]} {diff.shape[0]}", "255"]
        lines += [" ".join(str(int(v)) for v in row) for row in pixels]
        Path(out_pgm).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return diff


def write_feature_csv(feature: FeatureMap, path: str | Path) -> None:
    """Flat CSV form: a dims header row ("M,N,C" or "C"), then the values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if feature.kind == CONVOLUTIONAL:
            writer.writerow(list(feature.data.shape))
        else:
            writer.writerow([feature.data.shape[0]])
        writer.writerow([repr(float(v)) for v in feature.data.ravel()])


def read_feature_csv(path: str | Path) -> FeatureMap:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        dims = [int(v) for v in next(reader)]
        values = np.array([float(v) for v in next(reader)], dtype=np.float64)
    if len(dims) == 3:
        return FeatureMap.conv(values.reshape(dims))
    if len(dims) == 1:
        return FeatureMap.fc(values.reshape(dims))
    raise GramError(f"feature CSV header must have 1 or 3 dims, got {len(dims)}")

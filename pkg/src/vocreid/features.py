"""Pooling, normalization, heatmap cropping and learning-rate schedule."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingMatrix, ReidError, ValidationError


class NoBoxError(ReidError):
    category = "no_box"


def gem_pool(feature_map, p: float = 3.0) -> np.ndarray:
    """Generalized-mean pooling of a K x H x W map to K values.

    Each channel becomes ``mean(x ** p) ** (1 / p)``; ``p = 1`` is average
    pooling and large ``p`` approaches max pooling. A 2-D input is treated
    as a single channel.
    """
    x = np.asarray(feature_map, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValidationError(f"feature map must be K x H x W, got shape {x.shape}")
    if x.size == 0:
        raise ValidationError("empty feature map")
    if not math.isfinite(p) or p < 1:
        raise ValidationError(f"GeM exponent must be finite and >= 1, got {p}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("feature map contains non-finite values")
    if (x < 0).any():
        raise ValidationError("feature map contains negative values")

    flat = x.reshape(x.shape[0], -1)
    if p == 1:
        return flat.mean(axis=1)
    # factor out the channel max so x ** p cannot overflow for large p
    top = flat.max(axis=1)
    safe = np.where(top > 0, top, 1.0)
    scaled = flat / safe[:, None]
    pooled = safe * np.mean(scaled**p, axis=1) ** (1.0 / p)
    pooled = np.where(top > 0, pooled, 0.0)
    # rounding can leave the result a hair outside [mean, max]
    return np.clip(pooled, flat.mean(axis=1), top)


def l2_normalize(matrix: EmbeddingMatrix | np.ndarray) -> EmbeddingMatrix:
    """Scale each row to unit Euclidean norm.

    All-zero rows are left untouched and listed in ``zero_rows`` of the
    result; a warning is emitted for them.
    """
    if not isinstance(matrix, EmbeddingMatrix):
        matrix = EmbeddingMatrix(np.asarray(matrix))
    x = np.asarray(matrix.data, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    zero = norms == 0
    out = x / np.where(zero, 1.0, norms)[:, None]
    # second pass makes the operation idempotent to the last bit in practice
    norms2 = np.sqrt(np.einsum("ij,ij->i", out, out))
    out = out / np.where(zero, 1.0, norms2)[:, None]
    zero_rows = np.flatnonzero(zero)
    if len(zero_rows):
        warnings.warn(f"{len(zero_rows)} all-zero row(s) left unnormalized", RuntimeWarning, stacklevel=2)
    return EmbeddingMatrix(out, matrix.branch, zero_rows=zero_rows)


def wsd_bbox(heatmap, threshold_fraction: float = 0.5):
    """Tightest box around heatmap cells above ``threshold_fraction * max``.

    Returns inclusive ``(x0, y0, x1, y1)`` in cell coordinates, x being the
    column index.
    """
    h = np.asarray(heatmap, dtype=np.float64)
    if h.ndim == 3 and h.shape[0] == 1:
        h = h[0]
    if h.ndim != 2 or h.size == 0:
        raise ValidationError(f"heatmap must be a non-empty H x W array, got shape {h.shape}")
    if not 0 < threshold_fraction < 1:
        raise ValidationError(f"threshold_fraction must lie in (0, 1), got {threshold_fraction}")
    top = h.max()
    if not top > 0:
        raise NoBoxError("heatmap has no positive response")
    ys, xs = np.nonzero(h > threshold_fraction * top)
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


@dataclass(frozen=True)
class LrSchedule:
    lr_max: float = 3.5e-4
    lr_min: float = 7.7e-7
    total_steps: int = 1

    def __post_init__(self):
        if not self.lr_max > 0:
            raise ValidationError("lr_max must be > 0")
        if not 0 <= self.lr_min <= self.lr_max:
            raise ValidationError("lr_min must lie in [0, lr_max]")
        if self.total_steps < 1:
            raise ValidationError("total_steps must be >= 1")


def cosine_lr(schedule: LrSchedule, step: int) -> float:
    """Cosine-annealed learning rate at ``step`` of ``schedule.total_steps``."""
    T = schedule.total_steps
    if not 0 <= step <= T:
        raise ValidationError(f"step {step} outside [0, {T}]")
    if step == 0:
        return float(schedule.lr_max)
    if step == T:
        return float(schedule.lr_min)
    span = schedule.lr_max - schedule.lr_min
    return schedule.lr_min + 0.5 * span * (1.0 + math.cos(math.pi * step / T))

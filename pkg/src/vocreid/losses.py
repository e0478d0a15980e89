"""Forward values of the batch-hard triplet and pairwise circle losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, ValidationError


@dataclass(frozen=True)
class LabeledBatch:
    """P classes x K instances. Rows are grouped by class in sampling order."""

    embeddings: np.ndarray
    labels: np.ndarray
    P: int
    K: int

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if emb.ndim != 2 or labels.shape != (emb.shape[0],):
            raise ValidationError("embeddings must be B x D with one label per row")
        if emb.shape[0] != self.P * self.K:
            raise ValidationError(f"batch size {emb.shape[0]} != P*K = {self.P * self.K}")
        _, counts = np.unique(labels, return_counts=True)
        if len(counts) != self.P or not np.all(counts == self.K):
            raise ValidationError("each of the P labels must appear exactly K times")
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_arrays(cls, embeddings, labels) -> "LabeledBatch":
        labels = np.asarray(labels)
        _, counts = np.unique(labels, return_counts=True)
        return cls(embeddings, labels, len(counts), int(counts[0]))


@dataclass(frozen=True)
class LossConfig:
    circle_scale: float = 64.0
    circle_margin: float = 0.35
    triplet_margin: float = 0.3
    circle_weight: float = 1.0
    triplet_weight: float = 1.0

    def __post_init__(self):
        if not self.circle_scale > 0:
            raise ValidationError("circle_scale must be > 0")
        if not 0 < self.circle_margin < 1:
            raise ValidationError("circle_margin must lie in (0, 1)")
        if not self.triplet_margin >= 0:
            raise ValidationError("triplet_margin must be >= 0")


def sample_batch(dataset: Dataset, P: int = 4, K: int = 16, seed: int = 0, branch: str = "vehicle") -> LabeledBatch:
    """Draw P distinct vehicle ids and K images of each (m-per-class sampling).

    Ids with fewer than K images are sampled with replacement. Uses every
    item of the dataset regardless of split.
    """
    if P < 1 or K < 1:
        raise ValidationError("P and K must be >= 1")
    labels = np.array([m.vehicle_id for m in dataset.meta], dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < P:
        raise ValidationError(f"need at least P={P} distinct classes, dataset has {len(classes)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(classes, size=P, replace=False)
    rows = []
    for c in chosen:
        members = np.flatnonzero(labels == c)
        rows.append(rng.choice(members, size=K, replace=len(members) < K))
    rows = np.concatenate(rows)
    data = np.asarray(dataset.branches[branch].data, dtype=np.float64)
    return LabeledBatch(data[rows], labels[rows], P, K)


def _pair_masks(labels):
    same = labels[:, None] == labels[None, :]
    eye = np.eye(len(labels), dtype=bool)
    return same & ~eye, ~same


def _euclidean(x):
    sq = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    return np.sqrt(sq)


def _stable_sum(values) -> float:
    # exactly rounded, so independent of element order
    return math.fsum(np.asarray(values, dtype=np.float64).tolist())


def triplet_loss_batch_hard(batch: LabeledBatch, margin: float = 0.3) -> float:
    """Mean hinge over anchors of hardest-positive minus hardest-negative distance."""
    x, labels = batch.embeddings, batch.labels
    pos, neg = _pair_masks(labels)
    if not pos.any(axis=1).all() or not neg.any(axis=1).all():
        raise ValidationError("every anchor needs at least one positive and one negative")
    d = _euclidean(x)
    hardest_pos = np.where(pos, d, -np.inf).max(axis=1)
    hardest_neg = np.where(neg, d, np.inf).min(axis=1)
    per_anchor = np.maximum(0.0, hardest_pos - hardest_neg + margin)
    return _stable_sum(per_anchor) / len(per_anchor)


def _logsumexp(v: np.ndarray) -> float:
    v = np.sort(v)
    top = v[-1]
    return float(top + math.log(_stable_sum(np.exp(v - top))))


def circle_loss(batch: LabeledBatch, config: LossConfig = LossConfig()) -> float:
    """Pairwise circle loss over all unordered pairs of the batch.

    Similarities are cosine similarities of L2-normalized copies of the
    embeddings; the weights ``alpha`` are the self-paced clamps.
    """
    x, labels = batch.embeddings, batch.labels
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValidationError("circle loss needs non-zero embeddings")
    x = x / norms
    s = x @ x.T
    iu = np.triu_indices(len(labels), k=1)
    same = (labels[:, None] == labels[None, :])[iu]
    s = s[iu]
    sp, sn = s[same], s[~same]
    if len(sp) == 0 or len(sn) == 0:
        raise ValidationError("circle loss needs at least one positive and one negative pair")

    gamma, m = config.circle_scale, config.circle_margin
    alpha_p = np.maximum(0.0, 1.0 + m - sp)
    alpha_n = np.maximum(0.0, sn + m)
    logit_p = -gamma * alpha_p * (sp - (1.0 - m))
    logit_n = gamma * alpha_n * (sn - m)
    z = _logsumexp(logit_n) + _logsumexp(logit_p)
    # softplus(z) = log(1 + e^z) without overflow
    return float(np.logaddexp(0.0, z))


def combined_loss(batch: LabeledBatch, config: LossConfig = LossConfig()) -> float:
    return config.circle_weight * circle_loss(batch, config) + config.triplet_weight * triplet_loss_batch_hard(
        batch, config.triplet_margin
    )

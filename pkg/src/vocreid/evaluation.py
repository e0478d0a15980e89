"""mAP / CMC under the cross-camera re-identification protocol, and ablation sweeps."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from .core import (
    Dataset,
    ItemMeta,
    MetricReport,
    RankingResult,
    ReidError,
    ShapeError,
    SimilarityMatrix,
    meta_arrays,
)


class NoPositivesError(ReidError):
    category = "no_positives"


@dataclass(frozen=True)
class Masks:
    """``valid[i, j]``: gallery j takes part for query i. ``positive`` implies ``valid``."""

    valid: np.ndarray
    positive: np.ndarray


def build_masks(meta_q: Sequence[ItemMeta], meta_g: Sequence[ItemMeta]) -> Masks:
    """Exclude same-id same-camera gallery items; other same-id items are positives."""
    vq, cq, _ = meta_arrays(meta_q)
    vg, cg, _ = meta_arrays(meta_g)
    same_id = vq[:, None] == vg[None, :]
    same_cam = cq[:, None] == cg[None, :]
    invalid = same_id & same_cam
    return Masks(valid=~invalid, positive=same_id & ~same_cam)


def _order(scores: SimilarityMatrix) -> np.ndarray:
    key = -scores.data if scores.higher_is_closer else scores.data
    return np.argsort(key, axis=1, kind="stable")


def rank(scores: SimilarityMatrix, masks: Masks) -> RankingResult:
    """Best-first valid gallery indices per query; ties go to the lower index."""
    order = _order(scores)
    valid = np.take_along_axis(masks.valid, order, axis=1)
    return RankingResult([o[v] for o, v in zip(order, valid)], masks.valid)


def evaluate(scores: SimilarityMatrix, masks: Masks, topk: Optional[int] = None) -> MetricReport:
    """Per-query AP, mAP and CMC.

    AP is the mean of ``i / r_i`` over the positives, ``r_i`` being the rank
    of the i-th positive after invalid items are removed. With ``topk`` only
    positives within the first ``topk`` ranks count and the sum is divided
    by ``min(num_positives, topk)``. Queries without a valid positive are
    skipped and counted.
    """
    if scores.shape != masks.valid.shape:
        raise ShapeError(f"scores {scores.shape} and masks {masks.valid.shape} differ in shape")
    nq, ng = scores.shape
    order = _order(scores)
    valid = np.take_along_axis(masks.valid, order, axis=1)
    pos = np.take_along_axis(masks.positive & masks.valid, order, axis=1)

    # rank among valid entries, 1-based; invalid entries get no rank
    valid_rank = np.cumsum(valid, axis=1)
    npos = pos.sum(axis=1)
    has = npos > 0
    if not has.any():
        raise NoPositivesError("no query has a valid positive in the gallery")

    hits = np.cumsum(pos, axis=1)
    precision = np.where(pos, hits / np.maximum(valid_rank, 1), 0.0)
    if topk is not None:
        precision = np.where(valid_rank <= topk, precision, 0.0)
        denom = np.minimum(npos, topk)
    else:
        denom = npos
    ap = precision.sum(axis=1)[has] / denom[has]

    first = np.where(pos.any(axis=1), np.argmax(pos, axis=1), 0)
    first_rank = valid_rank[np.arange(nq), first]
    ks = np.arange(1, ng + 1)
    cmc = (first_rank[has][:, None] <= ks[None, :]).mean(axis=0)
    return MetricReport(
        map=float(np.mean(ap)),
        cmc=cmc,
        per_query_ap=ap,
        query_indices=np.flatnonzero(has),
        skipped_queries=int(nq - has.sum()),
    )


@dataclass(frozen=True)
class AblationConfig:
    orientation: bool = False
    camera: bool = False
    rerank: bool = False
    track: bool = False

    @property
    def label(self) -> str:
        parts = ["V"]
        if self.orientation:
            parts.append("O")
        if self.camera:
            parts.append("C")
        name = "+".join(parts)
        if self.track:
            name += " track"
        if self.rerank:
            name += " rerank"
        return name

    def as_dict(self):
        return {"orientation": self.orientation, "camera": self.camera, "rerank": self.rerank, "track": self.track}


def voc_sweep(dataset: Dataset, rerank: bool = False, track: bool = False) -> List[AblationConfig]:
    """Cumulative V, V+O, V+O+C rows, limited to the branches the dataset has."""
    rows = [AblationConfig(rerank=rerank, track=track)]
    if dataset.has("orientation"):
        rows.append(replace(rows[-1], orientation=True))
    if dataset.has("camera"):
        rows.append(replace(rows[-1], camera=True))
    return rows


def ablation_run(dataset: Dataset, toggles: Sequence[AblationConfig], **options) -> List[tuple]:
    """Evaluate each toggle combination; returns ``(config, MetricReport)`` pairs in order.

    ``options`` are forwarded to :func:`vocreid.pipeline.score_dataset`.
    """
    from .pipeline import score_dataset

    masks = build_masks(dataset.meta_q, dataset.meta_g)
    topk = options.pop("topk", None)
    results = []
    for cfg in toggles:
        scores = score_dataset(dataset, cfg, **options)
        results.append((cfg, evaluate(scores, masks, topk=topk)))
    return results


def format_table(results: Sequence[tuple]) -> str:
    """Plain-text table with one column per configuration, like an ablation table."""
    head = ["Method"] + [f"({i + 1})" for i in range(len(results))]
    rows = [
        ["Vehicle ReID"] + ["x" for _ in results],
        ["Orientation ReID"] + ["x" if c.orientation else "" for c, _ in results],
        ["Camera ReID"] + ["x" if c.camera else "" for c, _ in results],
        ["Track"] + ["x" if c.track else "" for c, _ in results],
        ["Re-rank"] + ["x" if c.rerank else "" for c, _ in results],
        ["mAP"] + [f"{100 * r.map:.1f}%" for _, r in results],
        ["rank1"] + [f"{100 * r.rank(1):.1f}%" for _, r in results],
        ["rank5"] + [f"{100 * r.rank(5):.1f}%" for _, r in results],
    ]
    table = [head] + rows
    widths = [max(len(row[i]) for row in table) for i in range(len(head))]
    lines = []
    for n, row in enumerate(table):
        lines.append(" | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if n == 0 or n == 5:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"

"""End-to-end scoring: track averaging, branch similarities, fusion, re-ranking."""

from __future__ import annotations

import json
from typing import Iterable, List, Optional, Sequence

from .core import Dataset, SimilarityMatrix, ValidationError
from .evaluation import AblationConfig, ablation_run, format_table, voc_sweep
from .rerank import RerankConfig, k_reciprocal_rerank
from .retrieval import (
    FusionWeights,
    fused_similarity,
    hard_camera_mask,
    track_aggregate,
    track_aggregate_scores,
)

TRACK_FIRST = "track-first"
RERANK_FIRST = "rerank-first"


def score_dataset(
    dataset: Dataset,
    config: AblationConfig = AblationConfig(),
    weights: FusionWeights = FusionWeights(),
    rerank_config: RerankConfig = RerankConfig(),
    track_branches: Optional[Iterable[str]] = None,
    order: str = TRACK_FIRST,
    hard_camera: Optional[str] = None,
    threads: int = 1,
) -> SimilarityMatrix:
    """Query x gallery scores for one ablation configuration.

    With ``order="track-first"`` gallery features are track-averaged before
    similarities; ``"rerank-first"`` re-ranks image-level scores and then
    averages score columns within each track. A ``hard_camera`` mode is
    applied last.
    """
    if order not in (TRACK_FIRST, RERANK_FIRST):
        raise ValidationError(f"unknown order {order!r}")
    branches = ["vehicle"]
    if config.orientation:
        if not dataset.has("orientation"):
            raise ValidationError("orientation branch requested but not supplied")
        branches.append("orientation")
    if config.camera:
        if not dataset.has("camera"):
            raise ValidationError("camera branch requested but not supplied")
        branches.append("camera")
    track_branches = set(branches if track_branches is None else track_branches)

    meta_g = dataset.meta_g
    q = {b: dataset.queries(b) for b in branches}
    g = {b: dataset.gallery(b) for b in branches}
    if config.track and order == TRACK_FIRST:
        g = {b: track_aggregate(m, meta_g) if b in track_branches else m for b, m in g.items()}

    scores = fused_similarity(q, g, weights, threads)
    if config.rerank:
        q_q = fused_similarity(q, q, weights, threads)
        g_g = fused_similarity(g, g, weights, threads)
        scores = k_reciprocal_rerank(scores, g_g, q_q, rerank_config, threads)
    if config.track and order == RERANK_FIRST:
        scores = track_aggregate_scores(scores, meta_g)
    if hard_camera:
        scores = hard_camera_mask(scores, dataset.meta_q, meta_g, hard_camera)
    return scores


def report_records(results: Sequence[tuple]) -> List[dict]:
    """One JSON-ready record per ablation row."""
    out = []
    for cfg, rep in results:
        out.append(
            {
                "config": dict(cfg.as_dict(), label=cfg.label),
                "map": rep.map,
                "rank1": rep.rank(1),
                "rank5": rep.rank(5),
                "num_queries": rep.num_queries,
                "skipped_queries": rep.skipped_queries,
            }
        )
    return out


def dumps_records(records: Sequence[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def run_ablation(
    dataset: Dataset,
    rerank: bool = False,
    track: bool = False,
    topk: Optional[int] = None,
    **options,
):
    """The V, V+O, V+O+C sweep; returns ``(results, jsonl_text, table_text)``."""
    rows = voc_sweep(dataset, rerank=rerank, track=track)
    results = ablation_run(dataset, rows, topk=topk, **options)
    return results, dumps_records(report_records(results)), format_table(results)

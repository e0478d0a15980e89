"""Branch similarities, track averaging and vehicle/orientation/camera fusion."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .core import (
    DISTANCE,
    SIMILARITY,
    EmbeddingMatrix,
    ItemMeta,
    ShapeError,
    SimilarityMatrix,
    ValidationError,
    meta_arrays,
)

# Row blocks have a fixed size so every entry is produced by the same BLAS
# call shape no matter how many workers share the blocks.
ROW_BLOCK = 128

MASKED_SIMILARITY = -1.0e9
MASKED_DISTANCE = 1.0e9

EXCLUDE_SAME_CAMERA = "exclude_same_camera"
LITERAL_EQ5 = "literal_eq5"


@dataclass(frozen=True)
class FusionWeights:
    lambda_o: float = 0.1
    lambda_c: float = 0.1

    def __post_init__(self):
        for name in ("lambda_o", "lambda_c"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")


def _unit_rows(m: EmbeddingMatrix | np.ndarray) -> np.ndarray:
    x = np.asarray(m.data if isinstance(m, EmbeddingMatrix) else m, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    if np.any(norms == 0):
        raise ValidationError("zero-norm row cannot take part in a cosine similarity")
    return x / norms[:, None]


def _blocks(n: int):
    return [(s, min(s + ROW_BLOCK, n)) for s in range(0, n, ROW_BLOCK)]


def _run_blocks(fn, n: int, threads: int):
    """Call ``fn(start, stop)`` for each fixed row block, on up to ``threads`` workers."""
    blocks = _blocks(n)
    with threadpool_limits(limits=1, user_api="blas"):
        if threads <= 1 or len(blocks) == 1:
            for b in blocks:
                fn(*b)
        else:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                list(ex.map(lambda b: fn(*b), blocks))


def _cosine(q: np.ndarray, g: np.ndarray, threads: int = 1) -> np.ndarray:
    out = np.empty((q.shape[0], g.shape[0]), dtype=np.float64)
    gt = np.ascontiguousarray(g.T)

    def work(a, b):
        np.matmul(q[a:b], gt, out=out[a:b])

    _run_blocks(work, q.shape[0], threads)
    return out


def similarity_matrix(
    queries: EmbeddingMatrix | np.ndarray,
    gallery: EmbeddingMatrix | np.ndarray,
    threads: int = 1,
) -> SimilarityMatrix:
    """Cosine similarity between every query row and every gallery row."""
    q, g = _unit_rows(queries), _unit_rows(gallery)
    if q.shape[1] != g.shape[1]:
        raise ShapeError(f"dimension mismatch: queries D={q.shape[1]}, gallery D={g.shape[1]}")
    return SimilarityMatrix(_cosine(q, g, threads), SIMILARITY)


def track_aggregate(gallery: EmbeddingMatrix, meta: Sequence[ItemMeta]) -> EmbeddingMatrix:
    """Replace each gallery row by the mean of all rows sharing its track id.

    Rows without a track id are singletons and come back unchanged.
    """
    meta = list(meta)
    if len(meta) != gallery.rows:
        raise ShapeError(f"{gallery.rows} gallery rows but {len(meta)} metadata entries")
    _, _, tracks = meta_arrays(meta)
    x = np.asarray(gallery.data, dtype=np.float64)
    out = x.copy()
    uniq, inverse, counts = np.unique(tracks, return_inverse=True, return_counts=True)
    for t in np.flatnonzero(counts > 1):
        rows = np.flatnonzero(inverse == t)
        out[rows] = x[rows].mean(axis=0)
    return EmbeddingMatrix(out, gallery.branch)


def voc_fuse(
    s_v: SimilarityMatrix,
    s_o: Optional[SimilarityMatrix] = None,
    s_c: Optional[SimilarityMatrix] = None,
    weights: FusionWeights = FusionWeights(),
) -> SimilarityMatrix:
    """Vehicle similarity minus weighted orientation and camera similarities."""
    out = np.array(s_v.data)
    for s, lam, name in ((s_o, weights.lambda_o, "orientation"), (s_c, weights.lambda_c, "camera")):
        if s is None:
            continue
        if s.shape != s_v.shape:
            raise ShapeError(f"{name} matrix shape {s.shape} != vehicle shape {s_v.shape}")
        if lam != 0:
            out = out - lam * s.data
    return SimilarityMatrix(out, SIMILARITY)


def fused_similarity(
    queries: Dict[str, EmbeddingMatrix],
    gallery: Dict[str, EmbeddingMatrix],
    weights: FusionWeights = FusionWeights(),
    threads: int = 1,
) -> SimilarityMatrix:
    """Block-wise ``voc_fuse`` of per-branch similarities.

    Same values as composing :func:`similarity_matrix` and :func:`voc_fuse`,
    without holding three full matrices at once. Branches missing from
    ``queries`` are skipped.
    """
    lams = {"orientation": weights.lambda_o, "camera": weights.lambda_c}
    q = {b: _unit_rows(m) for b, m in queries.items()}
    g = {b: np.ascontiguousarray(_unit_rows(gallery[b]).T) for b in q}
    for b in q:
        if q[b].shape[1] != g[b].shape[0]:
            raise ShapeError(f"{b}: dimension mismatch between queries and gallery")
    nq, ng = q["vehicle"].shape[0], g["vehicle"].shape[1]
    out = np.empty((nq, ng), dtype=np.float64)
    extra = [b for b in ("orientation", "camera") if b in q]

    def work(a, b):
        blk = np.matmul(q["vehicle"][a:b], g["vehicle"])
        for name in extra:
            if lams[name] != 0:
                blk = blk - lams[name] * np.matmul(q[name][a:b], g[name])
        out[a:b] = blk

    _run_blocks(work, nq, threads)
    return SimilarityMatrix(out, SIMILARITY)


def hard_camera_mask(
    s: SimilarityMatrix,
    meta_q: Sequence[ItemMeta],
    meta_g: Sequence[ItemMeta],
    mode: str = EXCLUDE_SAME_CAMERA,
) -> SimilarityMatrix:
    """Camera prior as a hard rule.

    ``exclude_same_camera`` pushes same-camera pairs to the end of every
    ranking with a sentinel score. ``literal_eq5`` returns the 0/1 camera
    rule as printed (0 for same camera, 1 otherwise) as a distance matrix.
    """
    _, cq, _ = meta_arrays(meta_q)
    _, cg, _ = meta_arrays(meta_g)
    if s.shape != (len(cq), len(cg)):
        raise ShapeError(f"score shape {s.shape} does not match metadata ({len(cq)}, {len(cg)})")
    same = cq[:, None] == cg[None, :]
    if mode == EXCLUDE_SAME_CAMERA:
        sentinel = MASKED_SIMILARITY if s.kind == SIMILARITY else MASKED_DISTANCE
        return SimilarityMatrix(np.where(same, sentinel, s.data), s.kind)
    if mode == LITERAL_EQ5:
        return SimilarityMatrix(np.where(same, 0.0, 1.0), DISTANCE)
    raise ValidationError(f"unknown hard camera mode {mode!r}")


def track_aggregate_scores(s: SimilarityMatrix, meta_g: Sequence[ItemMeta]) -> SimilarityMatrix:
    """Average score columns within each gallery track (track pooling after ranking)."""
    _, _, tracks = meta_arrays(meta_g)
    if s.shape[1] != len(tracks):
        raise ShapeError("score columns do not match gallery metadata")
    out = np.array(s.data)
    uniq, inverse, counts = np.unique(tracks, return_inverse=True, return_counts=True)
    for t in np.flatnonzero(counts > 1):
        cols = np.flatnonzero(inverse == t)
        out[:, cols] = s.data[:, cols].mean(axis=1, keepdims=True)
    return SimilarityMatrix(out, s.kind)

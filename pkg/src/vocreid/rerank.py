"""k-reciprocal encoding re-ranking.

Works on the joint (Q+G) x (Q+G) distance matrix, built lazily from the
query-gallery, query-query and gallery-gallery blocks so the full joint
matrix is never materialized. Distances are ``1 - s`` for similarity input.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import DISTANCE, ShapeError, SimilarityMatrix, ValidationError

_TOPK_BLOCK = 256


@dataclass(frozen=True)
class RerankConfig:
    k1: int = 20
    k2: int = 6
    lambda_rr: float = 0.3

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise ValidationError("k1 and k2 must be >= 1")
        if self.k2 > self.k1:
            raise ValidationError(f"k2={self.k2} must not exceed k1={self.k1}")
        if not 0 <= self.lambda_rr <= 1:
            raise ValidationError(f"lambda_rr must lie in [0, 1], got {self.lambda_rr}")


class _JointDistance:
    """Row access to [[q_q, q_g], [q_g.T, g_g]] without concatenating it."""

    def __init__(self, q_g, q_q, g_g):
        self.q_g, self.q_q, self.g_g = q_g, q_q, g_g
        self.nq, self.ng = q_g.shape
        self.n = self.nq + self.ng

    def rows(self, a: int, b: int) -> np.ndarray:
        parts = []
        if a < self.nq:
            e = min(b, self.nq)
            parts.append(np.hstack([self.q_q[a:e], self.q_g[a:e]]))
        if b > self.nq:
            s = max(a, self.nq) - self.nq
            e = b - self.nq
            parts.append(np.hstack([self.q_g[:, s:e].T, self.g_g[s:e]]))
        return parts[0] if len(parts) == 1 else np.vstack(parts)

    def entries(self, i: int, cols: np.ndarray) -> np.ndarray:
        cols = np.asarray(cols)
        out = np.empty(len(cols), dtype=np.float64)
        lo = cols < self.nq
        if i < self.nq:
            out[lo] = self.q_q[i, cols[lo]]
            out[~lo] = self.q_g[i, cols[~lo] - self.nq]
        else:
            gi = i - self.nq
            out[lo] = self.q_g[cols[lo], gi]
            out[~lo] = self.g_g[gi, cols[~lo] - self.nq]
        return out


def _top_neighbors(joint: _JointDistance, k: int) -> np.ndarray:
    """First ``k`` columns of each row's ascending order, ties by ascending index."""
    n = joint.n
    out = np.empty((n, k), dtype=np.int64)
    for a in range(0, n, _TOPK_BLOCK):
        b = min(a + _TOPK_BLOCK, n)
        d = joint.rows(a, b)
        if k < n:
            kth = np.partition(d, k - 1, axis=1)[:, k - 1]
        else:
            kth = d.max(axis=1)
        for r in range(b - a):
            cand = np.flatnonzero(d[r] <= kth[r])
            order = np.lexsort((cand, d[r, cand]))
            out[a + r] = cand[order[:k]]
    return out


def _reciprocal(rank: np.ndarray, k: int):
    """k-reciprocal neighbor set of every item, in forward-rank order."""
    fwd = rank[:, : k + 1]
    back = rank[fwd][:, :, : k + 1]
    ids = np.arange(rank.shape[0])[:, None, None]
    keep = (back == ids).any(axis=2)
    return [fwd[i][keep[i]] for i in range(rank.shape[0])]


def _encode(joint: _JointDistance, rank: np.ndarray, k1: int) -> sp.csr_matrix:
    """Gaussian-weighted sparse encoding over the expanded k-reciprocal sets."""
    n = joint.n
    r_full = _reciprocal(rank, k1)
    r_half = _reciprocal(rank, int(np.around(k1 / 2)))
    indptr = [0]
    indices, values = [], []
    for i in range(n):
        base = r_full[i]
        base_set = set(base.tolist())
        expanded = [base]
        for c in base:
            cand = r_half[c]
            overlap = sum(1 for x in cand.tolist() if x in base_set)
            if overlap > 2.0 / 3.0 * len(cand):
                expanded.append(cand)
        cols = np.unique(np.concatenate(expanded))
        w = np.exp(-joint.entries(i, cols))
        indices.append(cols)
        values.append(w / np.sum(w))
        indptr.append(indptr[-1] + len(cols))
    return sp.csr_matrix(
        (np.concatenate(values), np.concatenate(indices), np.asarray(indptr)), shape=(n, n)
    )


def _query_expand(v: sp.csr_matrix, rank: np.ndarray, k2: int) -> sp.csr_matrix:
    if k2 == 1:
        return v
    n = v.shape[0]
    rows = np.repeat(np.arange(n), k2)
    avg = sp.csr_matrix((np.full(n * k2, 1.0 / k2), (rows, rank[:, :k2].ravel())), shape=(n, n))
    return (avg @ v).tocsr()


def _jaccard(v: sp.csr_matrix, nq: int, threads: int) -> np.ndarray:
    """Jaccard distance between the first ``nq`` encodings and every encoding."""
    n = v.shape[0]
    csc = v.tocsc()
    csc.sort_indices()
    out = np.empty((nq, n), dtype=np.float64)

    def work(a, b):
        for i in range(a, b):
            lo, hi = v.indptr[i], v.indptr[i + 1]
            ks, vi = v.indices[lo:hi], v.data[lo:hi]
            starts, stops = csc.indptr[ks], csc.indptr[ks + 1]
            lens = stops - starts
            if lens.sum() == 0:
                out[i] = 1.0
                continue
            pos = np.concatenate([np.arange(s, e) for s, e in zip(starts, stops)])
            mins = np.minimum(np.repeat(vi, lens), csc.data[pos])
            overlap = np.bincount(csc.indices[pos], weights=mins, minlength=n)
            out[i] = 1.0 - overlap / (2.0 - overlap)

    step = 64
    chunks = [(a, min(a + step, nq)) for a in range(0, nq, step)]
    if threads <= 1 or len(chunks) == 1:
        for c in chunks:
            work(*c)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(lambda c: work(*c), chunks))
    return out


def _as_distance(m) -> np.ndarray:
    if isinstance(m, SimilarityMatrix):
        return m.as_distance()
    return np.asarray(m, dtype=np.float64)


def k_reciprocal_rerank(
    fused: SimilarityMatrix,
    gallery_self_sim: SimilarityMatrix,
    query_self_sim: SimilarityMatrix,
    config: RerankConfig = RerankConfig(),
    threads: int = 1,
) -> SimilarityMatrix:
    """Re-rank a query-gallery score matrix by k-reciprocal Jaccard distance.

    All three matrices must come from the same features and fusion weights.
    Returns a Q x G distance matrix
    ``lambda_rr * original + (1 - lambda_rr) * jaccard``.
    """
    q_g = _as_distance(fused)
    g_g = _as_distance(gallery_self_sim)
    q_q = _as_distance(query_self_sim)
    nq, ng = q_g.shape
    if g_g.shape != (ng, ng):
        raise ShapeError(f"gallery self matrix must be {ng} x {ng}, got {g_g.shape}")
    if q_q.shape != (nq, nq):
        raise ShapeError(f"query self matrix must be {nq} x {nq}, got {q_q.shape}")
    if config.k1 >= nq + ng:
        raise ValidationError(f"k1={config.k1} must be smaller than Q+G={nq + ng}")

    joint = _JointDistance(q_g, q_q, g_g)
    rank = _top_neighbors(joint, config.k1 + 1)
    v = _encode(joint, rank, config.k1)
    v = _query_expand(v, rank, config.k2)
    jac = _jaccard(v, nq, threads)[:, nq:]
    lam = config.lambda_rr
    final = jac * (1.0 - lam) + q_g * lam
    return SimilarityMatrix(final, DISTANCE)

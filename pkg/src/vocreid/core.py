"""Shared containers: branch embeddings, identity metadata, score matrices, reports."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

BRANCHES = ("vehicle", "orientation", "camera")
SPLITS = ("query", "gallery")
N_ORIENT_BINS = 36

SIMILARITY = "similarity"
DISTANCE = "distance"


class ReidError(Exception):
    """Base class for all errors raised by this package.

    ``category`` is a short machine-parseable tag used by the CLI.
    """

    category = "error"


class ValidationError(ReidError, ValueError):
    category = "validation"


class ShapeError(ReidError, ValueError):
    category = "shape"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EmbeddingMatrix:
    """N x D feature matrix produced by one branch network."""

    data: np.ndarray
    branch: str = "vehicle"
    zero_rows: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype.kind != "f":
            data = data.astype(np.float64)
        if data.ndim != 2:
            raise ShapeError(f"embedding matrix must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeError(f"embedding matrix must be non-empty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError(f"non-finite values in {self.branch} embeddings")
        if self.branch not in BRANCHES:
            raise ValidationError(f"unknown branch {self.branch!r}")
        object.__setattr__(self, "data", _readonly(data))
        zr = self.zero_rows
        zr = np.zeros(0, dtype=np.int64) if zr is None else np.asarray(zr, dtype=np.int64)
        object.__setattr__(self, "zero_rows", _readonly(zr))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    def take(self, idx) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.data[np.asarray(idx)], self.branch)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.branch == other.branch
            and self.data.dtype == other.data.dtype
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True)
class ItemMeta:
    image_id: str
    split: str
    vehicle_id: int
    camera_id: int
    track_id: Optional[int] = None
    orientation_bin: Optional[int] = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"{self.image_id}: split must be query or gallery, got {self.split!r}")
        if self.vehicle_id < 0 or self.camera_id < 0:
            raise ValidationError(f"{self.image_id}: vehicle_id and camera_id must be >= 0")
        if self.track_id is not None and self.track_id < 0:
            raise ValidationError(f"{self.image_id}: track_id must be >= 0")
        if self.orientation_bin is not None and not 0 <= self.orientation_bin < N_ORIENT_BINS:
            raise ValidationError(
                f"{self.image_id}: orientation_bin {self.orientation_bin} outside [0, {N_ORIENT_BINS})"
            )


@dataclass(frozen=True)
class SimilarityMatrix:
    """Q x G score matrix. ``kind`` says whether larger or smaller is closer."""

    data: np.ndarray
    kind: str = SIMILARITY

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeError(f"score matrix must be 2-D, got shape {data.shape}")
        if self.kind not in (SIMILARITY, DISTANCE):
            raise ValidationError(f"unknown score kind {self.kind!r}")
        if np.isnan(data).any():
            raise ValidationError("score matrix contains NaN")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def shape(self):
        return self.data.shape

    @property
    def higher_is_closer(self) -> bool:
        return self.kind == SIMILARITY

    def as_distance(self) -> np.ndarray:
        """Distances ``1 - s`` for similarities, the raw values otherwise."""
        if self.kind == DISTANCE:
            return np.array(self.data)
        return 1.0 - self.data

    def __eq__(self, other):
        if not isinstance(other, SimilarityMatrix):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class RankingResult:
    """Best-first gallery order per query, with the evaluation-excluded entries dropped."""

    order: List[np.ndarray]
    valid: np.ndarray

    def __len__(self):
        return len(self.order)


@dataclass(frozen=True)
class MetricReport:
    map: float
    cmc: np.ndarray
    per_query_ap: np.ndarray
    query_indices: np.ndarray
    skipped_queries: int = 0

    @property
    def num_queries(self) -> int:
        return int(len(self.per_query_ap))

    def rank(self, k: int) -> float:
        """CMC at rank ``k`` (1-based)."""
        if len(self.cmc) == 0:
            return 0.0
        return float(self.cmc[min(k, len(self.cmc)) - 1])


@dataclass(frozen=True)
class Dataset:
    """Validated, immutable bundle of branch embeddings and aligned metadata.

    Build with :func:`validate_dataset`.
    """

    branches: Dict[str, EmbeddingMatrix]
    meta: tuple
    query_idx: np.ndarray
    gallery_idx: np.ndarray

    @property
    def num_query(self) -> int:
        return len(self.query_idx)

    @property
    def num_gallery(self) -> int:
        return len(self.gallery_idx)

    def has(self, branch: str) -> bool:
        return branch in self.branches

    def queries(self, branch: str = "vehicle") -> EmbeddingMatrix:
        return self.branches[branch].take(self.query_idx)

    def gallery(self, branch: str = "vehicle") -> EmbeddingMatrix:
        return self.branches[branch].take(self.gallery_idx)

    @property
    def meta_q(self) -> List[ItemMeta]:
        return [self.meta[i] for i in self.query_idx]

    @property
    def meta_g(self) -> List[ItemMeta]:
        return [self.meta[i] for i in self.gallery_idx]


def validate_dataset(
    embeddings: Dict[str, EmbeddingMatrix] | EmbeddingMatrix,
    meta: Sequence[ItemMeta],
) -> Dataset:
    """Check that branch embeddings and metadata describe the same items.

    ``embeddings`` maps branch name to matrix; a bare matrix is taken as the
    vehicle branch. Dimensions may differ between branches.
    """
    if isinstance(embeddings, EmbeddingMatrix):
        embeddings = {embeddings.branch: embeddings}
    branches = {}
    for name, emb in embeddings.items():
        if not isinstance(emb, EmbeddingMatrix):
            emb = EmbeddingMatrix(np.asarray(emb), name)
        if emb.branch != name:
            emb = EmbeddingMatrix(emb.data, name)
        branches[name] = emb
    if "vehicle" not in branches:
        raise ValidationError("vehicle branch is required")

    meta = tuple(meta)
    for name, emb in branches.items():
        if emb.rows != len(meta):
            raise ValidationError(
                f"row-count mismatch: {name} has {emb.rows} rows, metadata has {len(meta)}"
            )
    seen = set()
    for m in meta:
        if m.image_id in seen:
            raise ValidationError(f"duplicate image_id {m.image_id!r}")
        seen.add(m.image_id)

    splits = np.array([m.split for m in meta])
    query_idx = np.flatnonzero(splits == "query")
    gallery_idx = np.flatnonzero(splits == "gallery")
    if len(query_idx) == 0:
        raise ValidationError("empty query split")
    if len(gallery_idx) == 0:
        raise ValidationError("empty gallery split")

    ordered = {b: branches[b] for b in BRANCHES if b in branches}
    return Dataset(ordered, meta, _readonly(query_idx), _readonly(gallery_idx))


def meta_arrays(meta: Iterable[ItemMeta]):
    """Vehicle ids, camera ids and track ids as integer arrays.

    Missing track ids become unique negative values, so every such item is
    its own singleton track.
    """
    meta = list(meta)
    vids = np.array([m.vehicle_id for m in meta], dtype=np.int64)
    cams = np.array([m.camera_id for m in meta], dtype=np.int64)
    tracks = np.array(
        [m.track_id if m.track_id is not None else -(i + 1) for i, m in enumerate(meta)],
        dtype=np.int64,
    )
    return vids, cams, tracks

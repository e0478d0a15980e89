"""Binary embedding / score files, metadata CSV and dataset directories.

Embedding file (little-endian)::

    offset 0   4 bytes   magic b"VOCE"
    offset 4   uint32    version = 1
    offset 8   uint64    rows
    offset 16  uint64    dims
    offset 24  float32   rows * dims values, row-major

Score file (little-endian)::

    offset 0   4 bytes   magic b"VOCS"
    offset 4   uint32    version = 1
    offset 8   uint64    rows (queries)
    offset 16  uint64    cols (gallery)
    offset 24  uint32    kind, 0 = similarity, 1 = distance
    offset 28  uint32    reserved, 0
    offset 32  float64   rows * cols values, row-major
"""

from __future__ import annotations

import csv
import io
import os
import struct
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .core import (
    BRANCHES,
    DISTANCE,
    SIMILARITY,
    Dataset,
    EmbeddingMatrix,
    ItemMeta,
    ReidError,
    SimilarityMatrix,
    validate_dataset,
)

EMB_MAGIC = b"VOCE"
SCORE_MAGIC = b"VOCS"
VERSION = 1
_EMB_HEADER = struct.Struct("<4sIQQ")
_SCORE_HEADER = struct.Struct("<4sIQQII")
_KINDS = {SIMILARITY: 0, DISTANCE: 1}

META_FIELDS = ["image_id", "split", "vehicle_id", "camera_id", "track_id", "orientation_bin"]


class FormatError(ReidError):
    category = "format"

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class BadMagicError(FormatError):
    category = "bad_magic"


class VersionMismatchError(FormatError):
    category = "version_mismatch"


class TruncatedError(FormatError):
    category = "truncated"


class TrailingDataError(FormatError):
    category = "trailing_data"


def write_bytes(path, data: bytes) -> None:
    """Write and fsync, so the file is complete on disk when this returns."""
    with open(path, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())


def write_text(path, text: str) -> None:
    write_bytes(path, text.encode("utf-8"))


def _check_header(buf: bytes, header: struct.Struct, magic: bytes):
    if len(buf) < header.size:
        raise TruncatedError(f"header needs {header.size} bytes, file has {len(buf)}", len(buf))
    fields = header.unpack_from(buf)
    if fields[0] != magic:
        raise BadMagicError(f"bad magic {fields[0]!r}, expected {magic!r}", 0)
    if fields[1] != VERSION:
        raise VersionMismatchError(f"unsupported version {fields[1]}, expected {VERSION}", 4)
    return fields


def _check_payload(buf: bytes, start: int, expected: int):
    have = len(buf) - start
    if have < expected:
        raise TruncatedError(f"payload truncated: expected {expected} bytes, found {have}", len(buf))
    if have > expected:
        raise TrailingDataError(f"{have - expected} bytes after the {expected}-byte payload", start + expected)


def encode_embeddings(matrix: EmbeddingMatrix | np.ndarray) -> bytes:
    data = matrix.data if isinstance(matrix, EmbeddingMatrix) else np.asarray(matrix)
    rows, dims = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    return _EMB_HEADER.pack(EMB_MAGIC, VERSION, rows, dims) + payload


def decode_embeddings(buf: bytes, branch: str = "vehicle") -> EmbeddingMatrix:
    _, _, rows, dims = _check_header(buf, _EMB_HEADER, EMB_MAGIC)
    start = _EMB_HEADER.size
    _check_payload(buf, start, rows * dims * 4)
    data = np.frombuffer(buf, dtype="<f4", count=rows * dims, offset=start).reshape(rows, dims)
    return EmbeddingMatrix(data.astype(np.float32), branch)


def write_embeddings(path, matrix: EmbeddingMatrix | np.ndarray) -> None:
    """Store as float32; float64 input is rounded."""
    write_bytes(path, encode_embeddings(matrix))


def read_embeddings(path, branch: str = "vehicle") -> EmbeddingMatrix:
    return decode_embeddings(Path(path).read_bytes(), branch)


def encode_scores(s: SimilarityMatrix) -> bytes:
    rows, cols = s.shape
    head = _SCORE_HEADER.pack(SCORE_MAGIC, VERSION, rows, cols, _KINDS[s.kind], 0)
    return head + np.ascontiguousarray(s.data, dtype="<f8").tobytes()


def decode_scores(buf: bytes) -> SimilarityMatrix:
    _, _, rows, cols, kind, _ = _check_header(buf, _SCORE_HEADER, SCORE_MAGIC)
    if kind not in (0, 1):
        raise FormatError(f"unknown score kind {kind}", 24)
    start = _SCORE_HEADER.size
    _check_payload(buf, start, rows * cols * 8)
    data = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=start).reshape(rows, cols)
    return SimilarityMatrix(data.astype(np.float64), SIMILARITY if kind == 0 else DISTANCE)


def write_scores(path, s: SimilarityMatrix) -> None:
    write_bytes(path, encode_scores(s))


def read_scores(path) -> SimilarityMatrix:
    return decode_scores(Path(path).read_bytes())


def _opt_int(cell: str):
    cell = cell.strip()
    return int(cell) if cell else None


def dumps_metadata(meta: Sequence[ItemMeta]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(META_FIELDS)
    for m in meta:
        w.writerow(
            [
                m.image_id,
                m.split,
                m.vehicle_id,
                m.camera_id,
                "" if m.track_id is None else m.track_id,
                "" if m.orientation_bin is None else m.orientation_bin,
            ]
        )
    return buf.getvalue()


def loads_metadata(text: str) -> List[ItemMeta]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != META_FIELDS:
        raise FormatError(f"metadata header must be {','.join(META_FIELDS)}, got {header}", 0)
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(META_FIELDS):
            raise FormatError(f"line {lineno}: expected {len(META_FIELDS)} fields, got {len(row)}", lineno)
        try:
            out.append(
                ItemMeta(
                    image_id=row[0],
                    split=row[1],
                    vehicle_id=int(row[2]),
                    camera_id=int(row[3]),
                    track_id=_opt_int(row[4]),
                    orientation_bin=_opt_int(row[5]),
                )
            )
        except ValueError as e:
            raise FormatError(f"line {lineno}: {e}", lineno) from None
    return out


def write_metadata(path, meta: Sequence[ItemMeta]) -> None:
    write_text(path, dumps_metadata(meta))


def read_metadata(path) -> List[ItemMeta]:
    return loads_metadata(Path(path).read_text(encoding="utf-8"))


def write_dataset(directory, dataset: Dataset) -> None:
    """``meta.csv`` plus ``<branch>.voce`` for each branch present."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, emb in dataset.branches.items():
        write_embeddings(d / f"{name}.voce", emb)
    write_metadata(d / "meta.csv", dataset.meta)


def read_dataset(directory) -> Dataset:
    d = Path(directory)
    meta = read_metadata(d / "meta.csv")
    branches = {b: read_embeddings(d / f"{b}.voce", b) for b in BRANCHES if (d / f"{b}.voce").exists()}
    return validate_dataset(branches, meta)

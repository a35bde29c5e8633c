"""Nearest-neighbor engine: exact and IVF (inverted-file) search under
Euclidean distance.

The IVF index clusters the reference set with k-means (k-means++ seeding,
Lloyd refinement) and scans only the posting lists of the nprobe nearest
centroids per query. nprobe equal to the centroid count degenerates to an
exact scan and is routed to the exact kernel.

A built index is immutable; ``nearest`` is safe under concurrent callers.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from .backend import get_kernels
from .embed import EmbeddingMatrix, embeddings_digest
from .errors import ConfigError, InputDataError

INDEX_MAGIC = b"NSI1"


@dataclass(frozen=True)
class DistanceRecord:
    """Nearest real-world neighbor of one query sample."""

    query_id: str
    neighbor_id: str
    distance: float


@dataclass(frozen=True)
class NeighborIndex:
    reference: EmbeddingMatrix
    mode: str  # "exact" | "ivf"
    centroids: np.ndarray | None = None
    assignments: np.ndarray | None = None
    nprobe: int = 8
    list_offsets: np.ndarray | None = None
    list_rows: np.ndarray | None = None

    @property
    def centroid_count(self) -> int:
        return 0 if self.centroids is None else int(self.centroids.shape[0])


def euclidean(p: np.ndarray, q: np.ndarray) -> float:
    """Standard Euclidean distance with 64-bit accumulation."""
    p = np.asarray(p)
    q = np.asarray(q)
    if p.shape != q.shape:
        raise InputDataError(f"dimension mismatch: {p.shape} vs {q.shape}")
    diff = p.astype(np.float64) - q.astype(np.float64)
    return float(np.sqrt(np.dot(diff, diff)))


def kmeans(
    data: np.ndarray,
    k: int,
    *,
    seed: int = 0,
    max_iters: int = 25,
    tol: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray]:
    """k-means++ seeding plus Lloyd iterations.

    Stops when the largest centroid movement drops below ``tol`` or after
    ``max_iters`` rounds. Returns float32 centroids and int64 assignments.
    Fully deterministic for a fixed seed and backend.
    """
    data = np.ascontiguousarray(data, dtype=np.float32)
    n = data.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"centroid count {k} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    kernels = get_kernels()

    # k-means++: D^2-weighted seeding
    centroids = np.empty((k, data.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = data[first]
    d2 = _d2_to_point(data, centroids[0])
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centroids[j] = data[pick]
        np.minimum(d2, _d2_to_point(data, centroids[j]), out=d2)

    centroids32 = centroids.astype(np.float32)
    assign = kernels.assign_nearest(data, centroids32)
    for _ in range(max_iters):
        new_centroids = centroids.copy()
        counts = np.bincount(assign, minlength=k)
        nonzero = counts > 0  # empty clusters keep their previous centroid
        for col in range(data.shape[1]):
            sums = np.bincount(assign, weights=data[:, col].astype(np.float64), minlength=k)
            new_centroids[nonzero, col] = sums[nonzero] / counts[nonzero]
        move = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        centroids32 = centroids.astype(np.float32)
        assign = kernels.assign_nearest(data, centroids32)
        if move < tol:
            break
    return centroids32, assign.astype(np.int64)


def _d2_to_point(data: np.ndarray, point: np.ndarray) -> np.ndarray:
    diff = data.astype(np.float64) - point[None, :]
    return np.einsum("ij,ij->i", diff, diff)


def _posting_lists(assign: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """CSR posting lists; rows within each list are ascending."""
    order = np.argsort(assign, kind="stable")
    rows = order.astype(np.int64)
    offsets = np.zeros(k + 1, dtype=np.int64)
    counts = np.bincount(assign, minlength=k)
    np.cumsum(counts, out=offsets[1:])
    return offsets, rows


def build_index(
    reference: EmbeddingMatrix,
    mode: str = "exact",
    *,
    centroid_count: int | None = None,
    nprobe: int = 8,
    seed: int = 0,
) -> NeighborIndex:
    """Build an exact (flat) or IVF index over the reference matrix."""
    if len(reference) == 0:
        raise InputDataError("cannot index an empty reference set")
    if mode == "exact":
        return NeighborIndex(reference=reference, mode="exact")
    if mode != "ivf":
        raise ConfigError(f"unknown index mode {mode!r}; expected 'exact' or 'ivf'")
    n = len(reference)
    c = centroid_count if centroid_count else int(math.ceil(math.sqrt(n)))
    if c > n:
        raise ConfigError(f"centroid count {c} exceeds reference size {n}")
    if nprobe < 1:
        raise ConfigError(f"nprobe must be >= 1, got {nprobe}")
    centroids, assign = kmeans(reference.data, c, seed=seed)
    offsets, rows = _posting_lists(assign, c)
    return NeighborIndex(
        reference=reference,
        mode="ivf",
        centroids=centroids,
        assignments=assign,
        nprobe=min(nprobe, c),
        list_offsets=offsets,
        list_rows=rows,
    )


def _pair_distances(Q: np.ndarray, R: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Rooted per-pair distances recomputed in float64 for the chosen rows."""
    out = np.empty(idx.shape[0], dtype=np.float64)
    chunk = 8192
    for s in range(0, idx.shape[0], chunk):
        e = min(s + chunk, idx.shape[0])
        diff = Q[s:e].astype(np.float64) - R[idx[s:e]].astype(np.float64)
        out[s:e] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return out


def nearest(index: NeighborIndex, queries: EmbeddingMatrix) -> list[DistanceRecord]:
    """Nearest reference neighbor for every query row, in query order.

    Distance ties are broken by the smaller reference row index. Internal
    comparisons use squared distances; the returned distance is the rooted
    per-pair value.
    """
    if queries.dim != index.reference.dim:
        raise InputDataError(
            f"dimension mismatch: queries dim {queries.dim} vs reference dim {index.reference.dim}"
        )
    kernels = get_kernels()
    Q = queries.data
    R = index.reference.data
    if index.mode == "exact" or index.nprobe >= index.centroid_count:
        # probing every posting list visits every row: identical to exact
        idx, _ = kernels.nearest_exact(Q, R)
    else:
        idx, _ = kernels.nearest_ivf(
            Q, index.centroids, index.list_offsets, index.list_rows, R, index.nprobe
        )
    dists = _pair_distances(Q, R, idx)
    ref_ids = index.reference.ids
    return [
        DistanceRecord(query_id=qid, neighbor_id=ref_ids[idx[i]], distance=float(dists[i]))
        for i, qid in enumerate(queries.ids)
    ]


def recall_at_1(approx: list[DistanceRecord], exact: list[DistanceRecord]) -> float:
    """Fraction of queries whose approximate distance matches the exact one
    within 1e-5 relative tolerance."""
    if len(approx) != len(exact):
        raise InputDataError(f"record count mismatch: {len(approx)} vs {len(exact)}")
    hits = 0
    for a, e in zip(approx, exact):
        if a.query_id != e.query_id:
            raise InputDataError(f"query id mismatch: {a.query_id!r} vs {e.query_id!r}")
        if math.isclose(a.distance, e.distance, rel_tol=1e-5, abs_tol=0.0):
            hits += 1
    return hits / len(approx) if approx else 1.0


def save_distances(records: list[DistanceRecord], path) -> None:
    """CSV with header query_id,neighbor_id,distance (6 decimal places)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["query_id", "neighbor_id", "distance"])
        for r in records:
            writer.writerow([r.query_id, r.neighbor_id, f"{r.distance:.6f}"])


def load_distances(path) -> list[DistanceRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["query_id", "neighbor_id", "distance"]:
            raise InputDataError(f"{path}: unexpected header {header!r}")
        for row in reader:
            if len(row) != 3:
                raise InputDataError(f"{path}: malformed row {row!r}")
            records.append(DistanceRecord(row[0], row[1], float(row[2])))
    return records


def save_index(index: NeighborIndex, path) -> None:
    """Serialize index structure; the reference matrix travels separately and
    is re-attached at load time via its digest."""
    ref_digest = embeddings_digest(index.reference).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<B", 1 if index.mode == "ivf" else 0))
        fh.write(struct.pack("<H", len(ref_digest)))
        fh.write(ref_digest)
        if index.mode == "ivf":
            c, dim = index.centroids.shape
            fh.write(struct.pack("<IIQ", c, dim, index.assignments.shape[0]))
            fh.write(struct.pack("<I", index.nprobe))
            fh.write(np.ascontiguousarray(index.centroids, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(index.assignments, dtype="<i8").tobytes())


def load_index(path, reference: EmbeddingMatrix) -> NeighborIndex:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != INDEX_MAGIC:
        raise InputDataError(f"{path}: bad magic, not an index file")
    off = 4
    (is_ivf,) = struct.unpack_from("<B", blob, off)
    off += 1
    (dlen,) = struct.unpack_from("<H", blob, off)
    off += 2
    stored_digest = blob[off : off + dlen].decode("ascii")
    off += dlen
    actual = embeddings_digest(reference)
    if stored_digest != actual:
        raise InputDataError(
            f"{path}: index was built over embeddings with digest {stored_digest}, "
            f"got {actual}"
        )
    if not is_ivf:
        return NeighborIndex(reference=reference, mode="exact")
    c, dim, n = struct.unpack_from("<IIQ", blob, off)
    off += struct.calcsize("<IIQ")
    (nprobe,) = struct.unpack_from("<I", blob, off)
    off += 4
    centroids = np.frombuffer(blob, dtype="<f4", count=c * dim, offset=off).reshape(c, dim).copy()
    off += c * dim * 4
    assign = np.frombuffer(blob, dtype="<i8", count=n, offset=off).copy()
    off += n * 8
    if off != len(blob):
        raise InputDataError(f"{path}: {len(blob) - off} trailing bytes")
    if n != len(reference):
        raise InputDataError(f"{path}: index covers {n} rows, reference has {len(reference)}")
    offsets, rows = _posting_lists(assign, c)
    return NeighborIndex(
        reference=reference,
        mode="ivf",
        centroids=centroids,
        assignments=assign,
        nprobe=int(nprobe),
        list_offsets=offsets,
        list_rows=rows,
    )

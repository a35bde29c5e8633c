"""Pure-numpy fallback for the distance kernels.

Same contract as the numba module: float32 inputs, float64 accumulation,
squared distances out, ties broken by the smaller reference row index.
Exact search uses the ||q||^2 + ||r||^2 - 2 q.r expansion over blocks so the
working set stays bounded; IVF batches queries by probed centroid so every
posting list is scanned with one matrix product.
"""

from __future__ import annotations

import numpy as np

_Q_CHUNK = 1024
_R_CHUNK = 16384


def _row_norms_sq(X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=np.float64)
    for s in range(0, X.shape[0], _R_CHUNK):
        e = min(s + _R_CHUNK, X.shape[0])
        block = X[s:e].astype(np.float64)
        out[s:e] = np.einsum("ij,ij->i", block, block)
    return out


def nearest_exact(Q: np.ndarray, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """True 1-NN of every query row in R: (row indices, squared distances)."""
    Q = np.ascontiguousarray(Q, dtype=np.float32)
    R = np.ascontiguousarray(R, dtype=np.float32)
    nq = Q.shape[0]
    qn = _row_norms_sq(Q)
    rn = _row_norms_sq(R)
    best_idx = np.full(nq, -1, dtype=np.int64)
    best_d2 = np.full(nq, np.inf, dtype=np.float64)
    for qs in range(0, nq, _Q_CHUNK):
        qe = min(qs + _Q_CHUNK, nq)
        Qd = Q[qs:qe].astype(np.float64)
        for rs in range(0, R.shape[0], _R_CHUNK):
            re_ = min(rs + _R_CHUNK, R.shape[0])
            Rd = R[rs:re_].astype(np.float64)
            d2 = qn[qs:qe, None] + rn[None, rs:re_] - 2.0 * (Qd @ Rd.T)
            loc = np.argmin(d2, axis=1)
            loc_d2 = d2[np.arange(qe - qs), loc]
            # scanning reference blocks in ascending order keeps the
            # smallest-row-index tie rule: replace only on strict improvement
            better = loc_d2 < best_d2[qs:qe]
            best_d2[qs:qe][better] = loc_d2[better]
            best_idx[qs:qe][better] = loc[better] + rs
    np.maximum(best_d2, 0.0, out=best_d2)
    return best_idx, best_d2


def nearest_ivf(
    Q: np.ndarray,
    C: np.ndarray,
    list_offsets: np.ndarray,
    list_rows: np.ndarray,
    R: np.ndarray,
    nprobe: int,
) -> tuple[np.ndarray, np.ndarray]:
    """1-NN restricted to the posting lists of the nprobe nearest centroids."""
    Q = np.ascontiguousarray(Q, dtype=np.float32)
    C = np.ascontiguousarray(C, dtype=np.float32)
    R = np.ascontiguousarray(R, dtype=np.float32)
    nq = Q.shape[0]
    c = C.shape[0]
    qn = _row_norms_sq(Q)
    cn = _row_norms_sq(C)

    # nprobe nearest centroids per query; stable argsort breaks distance
    # ties by the smaller centroid id
    probes = np.empty((nq, min(nprobe, c)), dtype=np.int64)
    for qs in range(0, nq, _Q_CHUNK):
        qe = min(qs + _Q_CHUNK, nq)
        Qd = Q[qs:qe].astype(np.float64)
        cd2 = qn[qs:qe, None] + cn[None, :] - 2.0 * (Qd @ C.astype(np.float64).T)
        probes[qs:qe] = np.argsort(cd2, axis=1, kind="stable")[:, : probes.shape[1]]

    # invert: the queries probing each centroid
    flat = probes.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_centroids = flat[order]
    query_of = order // probes.shape[1]
    starts = np.searchsorted(sorted_centroids, np.arange(c), side="left")
    ends = np.searchsorted(sorted_centroids, np.arange(c), side="right")

    best_idx = np.full(nq, -1, dtype=np.int64)
    best_d2 = np.full(nq, np.inf, dtype=np.float64)
    for j in range(c):
        rows = list_rows[list_offsets[j] : list_offsets[j + 1]]
        queries = query_of[starts[j] : ends[j]]
        if rows.size == 0 or queries.size == 0:
            continue
        Rd = R[rows].astype(np.float64)
        rn = np.einsum("ij,ij->i", Rd, Rd)
        Qd = Q[queries].astype(np.float64)
        d2 = qn[queries, None] + rn[None, :] - 2.0 * (Qd @ Rd.T)
        loc = np.argmin(d2, axis=1)  # first occurrence; rows are ascending
        loc_d2 = d2[np.arange(queries.size), loc]
        loc_row = rows[loc]
        cur_d2 = best_d2[queries]
        cur_row = best_idx[queries]
        better = (loc_d2 < cur_d2) | ((loc_d2 == cur_d2) & (loc_row < cur_row))
        upd = queries[better]
        best_d2[upd] = loc_d2[better]
        best_idx[upd] = loc_row[better]
    np.maximum(best_d2, 0.0, out=best_d2)
    return best_idx, best_d2


def assign_nearest(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Index of the nearest row of C for every row of X (k-means assignment)."""
    idx, _ = nearest_exact(X, C)
    return idx

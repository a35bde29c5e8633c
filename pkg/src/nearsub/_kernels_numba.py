"""Numba-accelerated distance kernels.

All kernels take float32 matrices and accumulate squared differences in
float64. fastmath only relaxes reduction order inside a pair's dim loop;
ties are still broken deterministically by the smaller row index, and a
compiled kernel is bit-reproducible run to run.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

_BLOCK = 64  # queries per parallel work item; keeps the block resident in L2


@njit(cache=True, fastmath=True)
def _pair_d2(Q, R, qi, rj):
    acc = 0.0
    for k in range(Q.shape[1]):
        diff = np.float64(Q[qi, k]) - np.float64(R[rj, k])
        acc += diff * diff
    return acc


@njit(parallel=True, cache=True, fastmath=True)
def _nearest_exact(Q, R, out_idx, out_d2):
    nq = Q.shape[0]
    nr = R.shape[0]
    nblocks = (nq + _BLOCK - 1) // _BLOCK
    for b in prange(nblocks):
        lo = b * _BLOCK
        hi = min(lo + _BLOCK, nq)
        for j in range(nr):
            for q in range(lo, hi):
                d2 = _pair_d2(Q, R, q, j)
                if d2 < out_d2[q]:
                    out_d2[q] = d2
                    out_idx[q] = j
    return out_idx, out_d2


@njit(parallel=True, cache=True, fastmath=True)
def _nearest_ivf(Q, C, list_offsets, list_rows, R, nprobe, out_idx, out_d2):
    nq = Q.shape[0]
    c = C.shape[0]
    for q in prange(nq):
        # nprobe nearest centroids, ties broken by smaller centroid id
        probe_ids = np.full(nprobe, -1, dtype=np.int64)
        probe_d2 = np.full(nprobe, np.inf)
        for j in range(c):
            d2 = _pair_d2(Q, C, q, j)
            # insertion into the sorted probe shortlist
            pos = nprobe
            while pos > 0 and (
                d2 < probe_d2[pos - 1]
                or (d2 == probe_d2[pos - 1] and j < probe_ids[pos - 1])
            ):
                pos -= 1
            if pos < nprobe:
                for m in range(nprobe - 1, pos, -1):
                    probe_d2[m] = probe_d2[m - 1]
                    probe_ids[m] = probe_ids[m - 1]
                probe_d2[pos] = d2
                probe_ids[pos] = j
        best_d2 = np.inf
        best_row = -1
        for p in range(nprobe):
            cj = probe_ids[p]
            if cj < 0:
                continue
            for t in range(list_offsets[cj], list_offsets[cj + 1]):
                row = list_rows[t]
                d2 = _pair_d2(Q, R, q, row)
                if d2 < best_d2 or (d2 == best_d2 and row < best_row):
                    best_d2 = d2
                    best_row = row
        out_idx[q] = best_row
        out_d2[q] = best_d2
    return out_idx, out_d2


def nearest_exact(Q: np.ndarray, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """True 1-NN of every query row in R: (row indices, squared distances)."""
    nq = Q.shape[0]
    out_idx = np.full(nq, -1, dtype=np.int64)
    out_d2 = np.full(nq, np.inf, dtype=np.float64)
    return _nearest_exact(
        np.ascontiguousarray(Q, dtype=np.float32),
        np.ascontiguousarray(R, dtype=np.float32),
        out_idx,
        out_d2,
    )


def nearest_ivf(
    Q: np.ndarray,
    C: np.ndarray,
    list_offsets: np.ndarray,
    list_rows: np.ndarray,
    R: np.ndarray,
    nprobe: int,
) -> tuple[np.ndarray, np.ndarray]:
    """1-NN restricted to the posting lists of the nprobe nearest centroids."""
    nq = Q.shape[0]
    out_idx = np.full(nq, -1, dtype=np.int64)
    out_d2 = np.full(nq, np.inf, dtype=np.float64)
    return _nearest_ivf(
        np.ascontiguousarray(Q, dtype=np.float32),
        np.ascontiguousarray(C, dtype=np.float32),
        np.ascontiguousarray(list_offsets, dtype=np.int64),
        np.ascontiguousarray(list_rows, dtype=np.int64),
        np.ascontiguousarray(R, dtype=np.float32),
        int(nprobe),
        out_idx,
        out_d2,
    )


def assign_nearest(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Index of the nearest row of C for every row of X (k-means assignment)."""
    idx, _ = nearest_exact(X, C)
    return idx

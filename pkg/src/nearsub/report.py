"""Plot-ready reports: distance histograms, percentile tables and a 2D
principal-component projection of the two embedding sets.

Everything is emitted as CSV with self-describing headers; plotting is left
to external tools.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .embed import EmbeddingMatrix
from .errors import ConfigError, InputDataError
from .knn import DistanceRecord
from .select import select_subset

log = logging.getLogger("nearsub.report")

PERCENTILE_MARKS = (10, 25, 50, 75)


@dataclass(frozen=True)
class Histogram:
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    total: int
    percentiles: dict[int, float]


@dataclass(frozen=True)
class Projection2D:
    ids: tuple[str, ...]
    coords: np.ndarray  # |ids| x 2
    explained_variance: tuple[float, float]


def _percentile_value(sorted_distances: list[float], p: float) -> float:
    n = len(sorted_distances)
    return sorted_distances[min(int(math.floor(p * n)), n - 1)]


def histogram(records: list[DistanceRecord], bins: int = 50) -> Histogram:
    """Equal-width bins over [min, max]; the last bin is right-inclusive.

    Annotates the 10/25/50/75th percentile values using the same index rule
    the subset selector applies.
    """
    if not records:
        raise InputDataError("cannot histogram an empty record list")
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    d = np.array([r.distance for r in records], dtype=np.float64)
    lo, hi = float(d.min()), float(d.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(d, bins=bins, range=(lo, hi))
    ds = sorted(float(x) for x in d)
    marks = {p: _percentile_value(ds, p / 100.0) for p in PERCENTILE_MARKS}
    return Histogram(
        bin_edges=tuple(float(e) for e in edges),
        counts=tuple(int(c) for c in counts),
        total=len(records),
        percentiles=marks,
    )


def percentile_table(
    records: list[DistanceRecord], phis: list[float]
) -> list[tuple[float, float, int]]:
    """(phi, threshold, selected count) rows, sorted by phi."""
    if not records:
        raise InputDataError("cannot tabulate an empty record list")
    rows = []
    for phi in sorted(phis):
        spec = select_subset(records, phi)
        rows.append((phi, spec.manifest.threshold, spec.manifest.selected_count))
    return rows


def _power_iteration(C: np.ndarray, start: np.ndarray, tol: float = 1e-6, max_iters: int = 500):
    v = start / np.linalg.norm(start)
    lam = 0.0
    for _ in range(max_iters):
        w = C @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        nv = w / norm
        lam = float(nv @ C @ nv)
        if np.linalg.norm(nv - v) < tol:
            v = nv
            break
        v = nv
    return v, lam


def pca_project(
    u: EmbeddingMatrix,
    r: EmbeddingMatrix,
    per_set_cap: int,
    seed: int = 0,
) -> Projection2D:
    """Project a seeded subsample of both sets onto their top two principal
    components (power iteration with deflation on the pooled covariance).

    Row ids are prefixed with their set of origin ("unrealistic:"/"realworld:").
    """
    if u.dim != r.dim:
        raise InputDataError(f"dimension mismatch: {u.dim} vs {r.dim}")
    if per_set_cap < 2:
        raise ConfigError(f"per_set_cap must be >= 2, got {per_set_cap}")
    rng = np.random.default_rng(seed)

    def subsample(m: EmbeddingMatrix, prefix: str):
        n = len(m)
        if n > per_set_cap:
            rows = np.sort(rng.choice(n, size=per_set_cap, replace=False))
        else:
            rows = np.arange(n)
        ids = [f"{prefix}:{m.ids[i]}" for i in rows]
        return ids, m.data[rows].astype(np.float64)

    u_ids, u_data = subsample(u, "unrealistic")
    r_ids, r_data = subsample(r, "realworld")
    ids = tuple(u_ids + r_ids)
    X = np.concatenate([u_data, r_data], axis=0)
    X = X - X.mean(axis=0, keepdims=True)

    n = X.shape[0]
    C = (X.T @ X) / max(n - 1, 1)
    total_var = float(np.trace(C))
    if total_var <= 0.0:
        log.warning("projection input has zero variance; emitting zero coordinates")
        return Projection2D(ids=ids, coords=np.zeros((n, 2)), explained_variance=(0.0, 0.0))

    start1 = rng.standard_normal(X.shape[1])
    v1, lam1 = _power_iteration(C, start1)
    C2 = C - lam1 * np.outer(v1, v1)
    start2 = rng.standard_normal(X.shape[1])
    start2 -= (start2 @ v1) * v1  # keep the second start off the first axis
    if np.linalg.norm(start2) == 0.0:
        start2 = rng.standard_normal(X.shape[1])
    v2, lam2 = _power_iteration(C2, start2)

    lam1 = max(lam1, 0.0)
    lam2 = max(min(lam2, lam1), 0.0)
    ratio1 = min(lam1 / total_var, 1.0)
    ratio2 = min(lam2 / total_var, ratio1)
    if ratio2 < 1e-12:
        log.warning("projection input has rank < 2 after centering; second axis is zero")
        coords = np.stack([X @ v1, np.zeros(n)], axis=1)
        return Projection2D(ids=ids, coords=coords, explained_variance=(ratio1, 0.0))

    coords = np.stack([X @ v1, X @ v2], axis=1)
    return Projection2D(ids=ids, coords=coords, explained_variance=(ratio1, ratio2))


def save_histogram(hist: Histogram, path) -> None:
    """`bin_lo,bin_hi,count` rows preceded by `# pNN=...` percentile lines."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for p in PERCENTILE_MARKS:
            fh.write(f"# p{p}={hist.percentiles[p]:.6f}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for i, count in enumerate(hist.counts):
            writer.writerow([f"{hist.bin_edges[i]:.6f}", f"{hist.bin_edges[i + 1]:.6f}", count])


def save_percentile_table(rows: list[tuple[float, float, int]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["phi", "threshold", "count"])
        for phi, threshold, count in rows:
            writer.writerow([f"{phi:g}", f"{threshold:.6f}", count])


def save_projection(proj: Projection2D, path) -> None:
    """`id,set,x,y` rows; the set column comes from the id prefix."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "set", "x", "y"])
        for i, tagged in enumerate(proj.ids):
            set_name, _, sid = tagged.partition(":")
            writer.writerow([sid, set_name, f"{proj.coords[i, 0]:.6f}", f"{proj.coords[i, 1]:.6f}"])

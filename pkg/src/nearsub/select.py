"""Percentile-threshold subset extraction over nearest-neighbor distance
records, plus the seeded random baseline and subset emission.

Given one distance record per query sample, the threshold is the distance at
the requested percentile of the ascending distance list; every record at or
below the threshold is kept, so ties at the threshold are all included. This
makes the selected count at least floor(phi * N), with equality exactly when
no ties sit on the threshold.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Corpus, make_corpus, save_corpus
from .errors import ConfigError, InputDataError
from .knn import DistanceRecord

RANDOM_THRESHOLD_SENTINEL = -1.0


@dataclass(frozen=True)
class SelectionManifest:
    phi: float
    threshold: float
    selected_count: int
    total_count: int
    unrealistic_digest: str = ""
    realworld_digest: str = ""
    distance_digest: str = ""
    random: bool = False
    seed: int | None = None

    @property
    def seed_independent(self) -> bool:
        return not self.random


@dataclass(frozen=True)
class SubsetSpec:
    manifest: SelectionManifest
    selected_ids: tuple[str, ...]


def _records_digest(records: list[DistanceRecord]) -> str:
    """Order-independent digest of the record multiset (sorted canonical CSV
    lines), so permuting the input cannot change the manifest."""
    lines = sorted(f"{r.query_id},{r.neighbor_id},{r.distance:.6f}" for r in records)
    h = hashlib.blake2b(digest_size=8)
    for line in lines:
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def select_subset(
    records: list[DistanceRecord],
    phi: float,
    *,
    unrealistic_digest: str = "",
    realworld_digest: str = "",
) -> SubsetSpec:
    """Keep every record within the distance threshold at the phi-th
    percentile (ties inclusive); phi=0 selects nothing, phi=1 everything."""
    if not records:
        raise InputDataError("cannot select from an empty record list")
    if not 0.0 <= phi <= 1.0:
        raise ConfigError(f"phi must be in [0, 1], got {phi}")
    ids = [r.query_id for r in records]
    if len(set(ids)) != len(ids):
        raise InputDataError("duplicate query ids in distance records")

    n = len(records)
    by_distance = sorted(records, key=lambda r: (r.distance, r.query_id))
    digest = _records_digest(records)

    if phi == 0.0:
        threshold = 0.0
        selected: list[DistanceRecord] = []
    else:
        cut = min(int(math.floor(phi * n)), n - 1)
        threshold = by_distance[cut].distance
        selected = [r for r in by_distance if r.distance <= threshold]

    manifest = SelectionManifest(
        phi=phi,
        threshold=threshold,
        selected_count=len(selected),
        total_count=n,
        unrealistic_digest=unrealistic_digest,
        realworld_digest=realworld_digest,
        distance_digest=digest,
    )
    return SubsetSpec(manifest=manifest, selected_ids=tuple(r.query_id for r in selected))


def random_subset(corpus: Corpus, fraction: float, seed: int, *, count: int | None = None) -> SubsetSpec:
    """Uniformly sample floor(fraction * N) ids without replacement.

    Selected ids keep corpus order; the manifest is flagged random with the
    threshold field set to the -1 sentinel. ``count`` overrides the computed
    size so a baseline can be matched to a curated subset exactly.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fraction must be in [0, 1], got {fraction}")
    n = len(corpus)
    size = int(math.floor(fraction * n)) if count is None else count
    if not 0 <= size <= n:
        raise ConfigError(f"subset size {size} outside [0, {n}]")
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(n, size=size, replace=False)) if size else np.empty(0, dtype=int)
    ids = corpus.ids()
    manifest = SelectionManifest(
        phi=fraction,
        threshold=RANDOM_THRESHOLD_SENTINEL,
        selected_count=size,
        total_count=n,
        unrealistic_digest=corpus.manifest.content_digest,
        random=True,
        seed=seed,
    )
    return SubsetSpec(manifest=manifest, selected_ids=tuple(ids[i] for i in picked))


def _manifest_lines(m: SelectionManifest) -> list[str]:
    lines = [
        f"phi: {m.phi!r}",
        f"threshold: {m.threshold!r}",
        f"selected_count: {m.selected_count}",
        f"total_count: {m.total_count}",
        f"unrealistic_digest: {m.unrealistic_digest}",
        f"realworld_digest: {m.realworld_digest}",
        f"distance_digest: {m.distance_digest}",
        f"random: {'true' if m.random else 'false'}",
        f"seed: {'' if m.seed is None else m.seed}",
    ]
    return lines


def save_subset_spec(spec: SubsetSpec, path) -> None:
    """Human-readable key-value header, blank line, one selected id per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in _manifest_lines(spec.manifest):
            fh.write(line)
            fh.write("\n")
        fh.write("\n")
        for sid in spec.selected_ids:
            fh.write(sid)
            fh.write("\n")


def load_subset_spec(path) -> SubsetSpec:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    head, _, tail = text.partition("\n\n")
    kv: dict[str, str] = {}
    for line in head.splitlines():
        key, _, value = line.partition(":")
        if not _:
            raise InputDataError(f"{path}: malformed manifest line {line!r}")
        kv[key.strip()] = value.strip()
    try:
        manifest = SelectionManifest(
            phi=float(kv["phi"]),
            threshold=float(kv["threshold"]),
            selected_count=int(kv["selected_count"]),
            total_count=int(kv["total_count"]),
            unrealistic_digest=kv.get("unrealistic_digest", ""),
            realworld_digest=kv.get("realworld_digest", ""),
            distance_digest=kv.get("distance_digest", ""),
            random=kv.get("random", "false") == "true",
            seed=int(kv["seed"]) if kv.get("seed") else None,
        )
    except (KeyError, ValueError) as exc:
        raise InputDataError(f"{path}: bad manifest: {exc}") from exc
    ids = tuple(line for line in tail.splitlines() if line)
    if len(ids) != manifest.selected_count:
        raise InputDataError(
            f"{path}: manifest says {manifest.selected_count} ids, file has {len(ids)}"
        )
    return SubsetSpec(manifest=manifest, selected_ids=ids)


def train_val_split_sizes(n: int, val_fraction: float = 0.02) -> tuple[int, int]:
    """Floor the validation share; train keeps at least one sample."""
    n_val = int(math.floor(val_fraction * n))
    if n - n_val < 1 and n >= 1:
        n_val = n - 1
    return n - n_val, n_val


def emit_subset(
    corpus: Corpus,
    spec: SubsetSpec,
    path,
    *,
    split_seed: int | None = None,
    train_path=None,
    val_path=None,
) -> None:
    """Write the selected samples (in spec order) as a corpus file plus the
    manifest sidecar at ``<path>.manifest``.

    When ``split_seed`` is given, also writes a deterministic 98/2
    train/validation split to ``train_path``/``val_path``.
    """
    by_id = {s.id: s for s in corpus.samples}
    missing = [sid for sid in spec.selected_ids if sid not in by_id]
    if missing:
        raise InputDataError(f"spec ids not present in corpus: {missing[:5]!r}")
    samples = tuple(by_id[sid] for sid in spec.selected_ids)
    subset = make_corpus(
        corpus.kind,
        samples,
        created_at=corpus.manifest.created_at,
        dedup_applied=corpus.manifest.dedup_applied,
        dedup_threshold=corpus.manifest.dedup_threshold,
    )
    save_corpus(subset, path)
    with open(str(path) + ".manifest", "w", encoding="utf-8", newline="\n") as fh:
        for line in _manifest_lines(spec.manifest):
            fh.write(line)
            fh.write("\n")

    if split_seed is None:
        return
    if train_path is None or val_path is None:
        raise ConfigError("split requested but train_path/val_path missing")
    rng = np.random.default_rng(split_seed)
    order = rng.permutation(len(samples))
    n_train, _ = train_val_split_sizes(len(samples))
    train_rows = sorted(order[:n_train])
    val_rows = sorted(order[n_train:])
    train = make_corpus(corpus.kind, tuple(samples[i] for i in train_rows),
                        created_at=corpus.manifest.created_at)
    val = make_corpus(corpus.kind, tuple(samples[i] for i in val_rows),
                      created_at=corpus.manifest.created_at)
    save_corpus(train, train_path)
    save_corpus(val, val_path)

"""Desk-scale evaluation harness: a logistic-regression probe over frozen
embeddings stands in for fine-tuning a large model, so curated/random/all/none
pretraining regimes can be compared cheaply.

Training regimes mirror a two-phase schedule: phase one trains the probe on a
subset of the (large, weakly labeled) corpus, phase two continues training the
same probe on real-world training data. Regime "zero" skips phase one,
"full" uses the whole large corpus.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Corpus, Sample, make_corpus
from .embed import EmbeddingMatrix
from .errors import ConfigError, InputDataError
from .knn import DistanceRecord
from .select import random_subset, select_subset

REGIMES = ("curated", "full", "random", "zero")


@dataclass(frozen=True)
class SplitSpec:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int


@dataclass(frozen=True)
class ProbeConfig:
    learning_rate: float = 0.5
    epochs: int = 50
    l2_penalty: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.l2_penalty < 0:
            raise ConfigError(f"l2_penalty must be >= 0, got {self.l2_penalty}")


@dataclass(frozen=True)
class EvalResult:
    regime: str
    phi_or_fraction: float
    seed: int
    train_size: int
    accuracy: float | None
    f1: float | None
    skipped_reason: str = ""


def split_corpus(corpus: Corpus, seed: int, fractions=(0.7, 0.1, 0.2)) -> SplitSpec:
    """Seeded shuffle, then split by floor(train), floor(val), remainder."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    ids = corpus.ids()
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_train = int(math.floor(fractions[0] * len(ids)))
    n_val = int(math.floor(fractions[1] * len(ids)))
    train = tuple(ids[i] for i in order[:n_train])
    val = tuple(ids[i] for i in order[n_train : n_train + n_val])
    test = tuple(ids[i] for i in order[n_train + n_val :])
    return SplitSpec(train_ids=train, val_ids=val, test_ids=test, seed=seed)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _loss(X, y, w, b, l2) -> float:
    z = X @ w + b
    signed = np.where(y == 1, z, -z)
    ce = float(np.logaddexp(0.0, -signed).mean())
    return ce + 0.5 * l2 * float(np.dot(w, w))


def train_probe(
    X: np.ndarray,
    y: np.ndarray,
    config: ProbeConfig,
    *,
    init: tuple[np.ndarray, float] | None = None,
) -> tuple[np.ndarray, float]:
    """Full-batch gradient descent on L2-penalized cross-entropy.

    Weights start at zero (or at ``init`` for a continued phase). A
    backtracking halving of the step on any loss increase keeps the loss
    non-increasing over epochs. Deterministic: nothing is sampled.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InputDataError(f"bad training shapes: X {X.shape}, y {y.shape}")
    classes = np.unique(y)
    if classes.size < 2:
        raise InputDataError("degenerate training set: only one class present")
    yf = (y == 1).astype(np.float64)

    if init is not None:
        w = np.array(init[0], dtype=np.float64, copy=True)
        b = float(init[1])
        if w.shape != (X.shape[1],):
            raise InputDataError(f"init weights shape {w.shape} != ({X.shape[1]},)")
    else:
        w = np.zeros(X.shape[1], dtype=np.float64)
        b = 0.0

    n = X.shape[0]
    l2 = config.l2_penalty
    cur = _loss(X, yf, w, b, l2)
    for epoch in range(config.epochs):
        p = _sigmoid(X @ w + b)
        g = p - yf
        gw = X.T @ g / n + l2 * w
        gb = float(g.mean())
        step = config.learning_rate
        for _ in range(40):
            nw = w - step * gw
            nb = b - step * gb
            nl = _loss(X, yf, nw, nb, l2)
            if not math.isfinite(nl):
                raise InputDataError(f"NaN loss at epoch {epoch}")
            if nl <= cur:
                w, b, cur = nw, nb, nl
                break
            step *= 0.5
        # if no halved step improved the loss we stay put for this epoch
    return w, b


def predict(w: np.ndarray, b: float, X: np.ndarray) -> np.ndarray:
    return (_sigmoid(np.asarray(X, dtype=np.float64) @ w + b) >= 0.5).astype(np.int64)


def evaluate(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """(accuracy, F1 of the defective class) at threshold 0.5; F1 is 0 when
    precision + recall is 0."""
    if X.shape[0] == 0:
        raise InputDataError("cannot evaluate on an empty test set")
    pred = predict(w, b, X)
    truth = (np.asarray(y) == 1).astype(np.int64)
    accuracy = float((pred == truth).mean())
    tp = int(((pred == 1) & (truth == 1)).sum())
    fp = int(((pred == 1) & (truth == 0)).sum())
    fn = int(((pred == 0) & (truth == 1)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return accuracy, f1


def labels_of(corpus: Corpus, ids: tuple[str, ...]) -> np.ndarray:
    by_id = {s.id: s.label for s in corpus.samples}
    try:
        return np.array([by_id[i] for i in ids], dtype=np.int64)
    except KeyError as exc:
        raise InputDataError(f"id {exc.args[0]!r} not present in corpus") from exc


def _rows_for(matrix: EmbeddingMatrix, wanted: set[str]) -> np.ndarray:
    """Row indices of ``wanted`` ids in matrix (corpus) order."""
    return np.array([i for i, sid in enumerate(matrix.ids) if sid in wanted], dtype=np.int64)


def run_regime_grid(
    u_corpus: Corpus,
    u_matrix: EmbeddingMatrix,
    r_corpus: Corpus,
    r_matrix: EmbeddingMatrix,
    records: list[DistanceRecord],
    phis: list[float],
    seeds: list[int],
    config: ProbeConfig,
    *,
    split_seed: int = 0,
    split_fractions=(0.7, 0.1, 0.2),
) -> list[EvalResult]:
    """Accuracy/F1 of every (regime, phi, seed) cell on held-out real data.

    The real corpus is split train/val/test with ``split_seed``; distance
    records are expected to have been computed against the train split only.
    Phase-one training sets are gathered in corpus row order, which makes the
    curated phi=1 cell bitwise equal to the full regime and phi=0 to "zero".
    Degenerate (single-class) subsets become skipped rows, not crashes.
    """
    if u_matrix.ids != u_corpus.ids():
        raise InputDataError("unrealistic matrix ids do not match corpus order")
    if r_matrix.ids != r_corpus.ids():
        raise InputDataError("real-world matrix ids do not match corpus order")

    split = split_corpus(r_corpus, split_seed, split_fractions)
    r_train_rows = _rows_for(r_matrix, set(split.train_ids))
    r_test_rows = _rows_for(r_matrix, set(split.test_ids))
    if r_test_rows.size == 0:
        raise InputDataError("real-world test split is empty")
    Xr_train = r_matrix.data[r_train_rows]
    yr_train = labels_of(r_corpus, tuple(r_matrix.ids[i] for i in r_train_rows))
    Xr_test = r_matrix.data[r_test_rows]
    yr_test = labels_of(r_corpus, tuple(r_matrix.ids[i] for i in r_test_rows))

    def cell(regime: str, value: float, seed: int, subset_rows: np.ndarray) -> EvalResult:
        train_size = int(subset_rows.size + Xr_train.shape[0])
        try:
            params = None
            if subset_rows.size:
                Xs = u_matrix.data[subset_rows]
                ys = labels_of(u_corpus, tuple(u_matrix.ids[i] for i in subset_rows))
                params = train_probe(Xs, ys, config)
            w, b = train_probe(Xr_train, yr_train, config, init=params)
            accuracy, f1 = evaluate(w, b, Xr_test, yr_test)
            return EvalResult(regime, value, seed, train_size, accuracy, f1)
        except InputDataError as exc:
            return EvalResult(regime, value, seed, train_size, None, None, str(exc))

    results: list[EvalResult] = []
    empty = np.empty(0, dtype=np.int64)
    all_rows = np.arange(len(u_matrix), dtype=np.int64)
    for seed in seeds:
        results.append(cell("zero", 0.0, seed, empty))
        results.append(cell("full", 1.0, seed, all_rows))
        for phi in phis:
            spec = select_subset(records, phi)
            curated_rows = _rows_for(u_matrix, set(spec.selected_ids))
            results.append(cell("curated", phi, seed, curated_rows))
            rand = random_subset(u_corpus, phi, seed, count=int(curated_rows.size))
            random_rows = _rows_for(u_matrix, set(rand.selected_ids))
            results.append(cell("random", phi, seed, random_rows))
    results.sort(key=lambda r: (r.regime, r.phi_or_fraction, r.seed))
    return results


def save_eval_table(results: list[EvalResult], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["regime", "phi_or_fraction", "seed", "train_size", "accuracy", "f1", "skipped_reason"]
        )
        for r in results:
            writer.writerow(
                [
                    r.regime,
                    f"{r.phi_or_fraction:g}",
                    r.seed,
                    r.train_size,
                    "" if r.accuracy is None else f"{r.accuracy:.6f}",
                    "" if r.f1 is None else f"{r.f1:.6f}",
                    r.skipped_reason,
                ]
            )


def synth_benchmark(
    n_real: int,
    n_unreal: int,
    realistic_fraction: float,
    dim: int,
    noise_label_rate: float,
    seed: int,
) -> tuple[Corpus, EmbeddingMatrix, Corpus, EmbeddingMatrix, frozenset[str]]:
    """Controlled two-corpus benchmark with known ground truth.

    Real-world samples come from two class-conditional unit Gaussians whose
    means sit 4 sigma apart. A ``realistic_fraction`` share of the large
    corpus is drawn from those same Gaussians with correct labels; the rest
    comes from a distant third cluster (>= 10 sigma from both means) labeled
    defective and then flipped at ``noise_label_rate``. Returns the two
    corpora, their embedding matrices (the raw vectors), and the ground-truth
    set of realistic ids.
    """
    if not 0.0 <= realistic_fraction <= 1.0:
        raise ConfigError(f"realistic_fraction must be in [0, 1], got {realistic_fraction}")
    if dim < 2:
        raise ConfigError(f"dim must be >= 2, got {dim}")
    rng = np.random.default_rng(seed)
    mu1 = np.zeros(dim)
    mu1[0] = 4.0
    far = np.zeros(dim)
    far[1] = 10.0

    def real_like(count, rng):
        n0 = count // 2
        n1 = count - n0
        X = np.concatenate(
            [rng.standard_normal((n0, dim)), mu1 + rng.standard_normal((n1, dim))]
        )
        y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
        return X, y

    Xr, yr = real_like(n_real, rng)
    perm = rng.permutation(n_real)
    Xr, yr = Xr[perm], yr[perm]

    n_good = int(round(realistic_fraction * n_unreal))
    Xg, yg = real_like(n_good, rng)
    n_bad = n_unreal - n_good
    Xb = far + rng.standard_normal((n_bad, dim))
    yb = np.ones(n_bad, dtype=np.int64)
    flips = rng.random(n_bad) < noise_label_rate
    yb[flips] = 0
    Xu = np.concatenate([Xg, Xb])
    yu = np.concatenate([yg, yb])
    good = np.zeros(n_unreal, dtype=bool)
    good[:n_good] = True
    perm = rng.permutation(n_unreal)
    Xu, yu, good = Xu[perm], yu[perm], good[perm]

    width = max(len(str(max(n_real, n_unreal) - 1)), 1)

    def fingerprint(row):
        # token rendering of the leading coordinates, so even hash-based mock
        # embeddings of these texts vary with the underlying geometry
        return " ".join(f"c{j}v{int(np.floor(row[j]))}" for j in range(min(8, row.shape[0])))

    def build(kind, prefix, X, y):
        samples = tuple(
            Sample(
                id=f"{prefix}{i:0{width}d}",
                text=f"synthetic {kind} sample {prefix}{i:0{width}d} {fingerprint(X[i])}",
                label=int(y[i]),
                source="synth",
            )
            for i in range(X.shape[0])
        )
        corpus = make_corpus(kind, samples, created_at="1970-01-01T00:00:00Z")
        matrix = EmbeddingMatrix(ids=corpus.ids(), data=X.astype(np.float32), normalized=False)
        return corpus, matrix

    r_corpus, r_mat = build("realworld", "r", Xr, yr)
    u_corpus, u_mat = build("unrealistic", "u", Xu, yu)
    truth = frozenset(u_corpus.ids()[i] for i in range(n_unreal) if good[i])
    return r_corpus, r_mat, u_corpus, u_mat, truth

"""Corpus data model: ingestion, canonical serialization, tokenization and
near-duplicate removal.

A corpus file is newline-delimited JSON, one record per line with fields
``id`` (string), ``text`` (string), ``label`` (0/1) and optional ``source``.
Loading and saving round-trip byte-identically for files in canonical form
(the form ``save_corpus`` emits).
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import re
import string
from collections import Counter
from dataclasses import dataclass, replace
from typing import Iterable

from .errors import ConfigError, InputDataError

CORPUS_KINDS = ("unrealistic", "realworld")

# Tokens are maximal runs of characters that are neither whitespace nor ASCII
# punctuation; punctuation acts as a separator and is dropped.
_TOKEN_RE = re.compile(f"[^{re.escape(string.punctuation)}\\s]+")


@dataclass(frozen=True)
class Sample:
    """One program/function with a binary defect label."""

    id: str
    text: str
    label: int
    source: str = ""


@dataclass(frozen=True)
class CorpusManifest:
    sample_count: int
    content_digest: str
    created_at: str
    dedup_applied: bool = False
    dedup_threshold: float | None = None


@dataclass(frozen=True)
class Corpus:
    """An immutable, ordered collection of samples.

    Immutability makes a loaded corpus safe to share across threads; all
    curation operations produce new Corpus values.
    """

    kind: str
    samples: tuple[Sample, ...]
    manifest: CorpusManifest

    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.samples)

    def __len__(self) -> int:
        return len(self.samples)


def token_seq(text: str) -> list[str]:
    """Tokens of ``text`` in order of appearance (case preserved)."""
    return _TOKEN_RE.findall(text)


def tokenize(text: str) -> Counter:
    """Multiset of tokens: whitespace/punctuation-separated, punctuation dropped."""
    return Counter(token_seq(text))


def jaccard(a: Counter | set, b: Counter | set) -> float:
    """Set-semantics Jaccard similarity of two token multisets.

    Multiplicities are collapsed. Two empty multisets are defined as
    identical (similarity 1.0).
    """
    sa = set(a)
    sb = set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def canonical_line(sample: Sample) -> str:
    """The canonical one-line JSON serialization of a sample."""
    obj = {"id": sample.id, "text": sample.text, "label": sample.label, "source": sample.source}
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def content_digest(samples: Iterable[Sample]) -> str:
    """64-bit hex digest of the canonical serialization of ``samples``."""
    h = hashlib.blake2b(digest_size=8)
    for s in samples:
        h.update(canonical_line(s).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def _now_iso() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def build_manifest(
    samples: tuple[Sample, ...],
    *,
    created_at: str | None = None,
    dedup_applied: bool = False,
    dedup_threshold: float | None = None,
) -> CorpusManifest:
    return CorpusManifest(
        sample_count=len(samples),
        content_digest=content_digest(samples),
        created_at=created_at if created_at is not None else _now_iso(),
        dedup_applied=dedup_applied,
        dedup_threshold=dedup_threshold,
    )


def make_corpus(
    kind: str,
    samples: Iterable[Sample],
    *,
    created_at: str | None = None,
    dedup_applied: bool = False,
    dedup_threshold: float | None = None,
) -> Corpus:
    """Validate samples and assemble a corpus with a fresh manifest."""
    if kind not in CORPUS_KINDS:
        raise ConfigError(f"unknown corpus kind {kind!r}; expected one of {CORPUS_KINDS}")
    samples = tuple(samples)
    seen: set[str] = set()
    for i, s in enumerate(samples):
        if not s.id:
            raise InputDataError(f"sample at position {i} has an empty id")
        if s.id in seen:
            raise InputDataError(f"duplicate sample id {s.id!r}")
        if s.label not in (0, 1):
            raise InputDataError(f"sample {s.id!r} has label {s.label!r}, expected 0 or 1")
        seen.add(s.id)
    manifest = build_manifest(
        samples,
        created_at=created_at,
        dedup_applied=dedup_applied,
        dedup_threshold=dedup_threshold,
    )
    return Corpus(kind=kind, samples=samples, manifest=manifest)


def load_corpus(path, kind: str, *, created_at: str | None = None) -> Corpus:
    """Load a newline-delimited corpus file, preserving record order.

    Raises InputDataError naming the offending line for malformed records,
    duplicate ids, out-of-range labels and invalid UTF-8.
    """
    if kind not in CORPUS_KINDS:
        raise ConfigError(f"unknown corpus kind {kind!r}; expected one of {CORPUS_KINDS}")
    samples: list[Sample] = []
    seen: dict[str, int] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    raise InputDataError(f"{path}: blank record on line {lineno}")
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise InputDataError(f"{path}: malformed record on line {lineno}: {exc.msg}") from exc
                if not isinstance(obj, dict):
                    raise InputDataError(f"{path}: record on line {lineno} is not an object")
                for field in ("id", "text", "label"):
                    if field not in obj:
                        raise InputDataError(f"{path}: record on line {lineno} is missing field {field!r}")
                sid = obj["id"]
                text = obj["text"]
                label = obj["label"]
                source = obj.get("source", "")
                if not isinstance(sid, str) or not sid:
                    raise InputDataError(f"{path}: record on line {lineno} has a non-string or empty id")
                if not isinstance(text, str):
                    raise InputDataError(f"{path}: record {sid!r} on line {lineno} has a non-string text")
                if not isinstance(label, int) or isinstance(label, bool) or label not in (0, 1):
                    raise InputDataError(
                        f"{path}: record {sid!r} on line {lineno} has label {label!r}, expected 0 or 1"
                    )
                if sid in seen:
                    raise InputDataError(
                        f"{path}: duplicate id {sid!r} on line {lineno} (first seen on line {seen[sid]})"
                    )
                seen[sid] = lineno
                samples.append(Sample(id=sid, text=text, label=label, source=source))
    except UnicodeDecodeError as exc:
        raise InputDataError(f"{path}: invalid UTF-8 at byte {exc.start}") from exc
    return make_corpus(kind, samples, created_at=created_at)


def save_corpus(corpus: Corpus, path) -> None:
    """Write the corpus in canonical form (UTF-8, LF line endings)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in corpus.samples:
            fh.write(canonical_line(s))
            fh.write("\n")


def save_removed_ids(removed: list[str], path) -> None:
    """Plain-text removed-id list, one id per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rid in removed:
            fh.write(rid)
            fh.write("\n")


def dedup(corpus: Corpus, threshold: float = 0.8) -> tuple[Corpus, list[str]]:
    """Greedy near-duplicate removal in corpus order.

    A sample is removed iff its Jaccard similarity (set semantics) to any
    already-kept sample is >= threshold. An inverted token index prunes the
    pairwise scan to candidates sharing at least one token, which preserves
    exactness for any threshold > 0: disjoint token sets have similarity 0.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"dedup threshold must be in [0, 1], got {threshold}")

    kept: list[Sample] = []
    removed: list[str] = []

    if threshold == 0.0:
        # Every pair has similarity >= 0, so only the first sample survives.
        kept = list(corpus.samples[:1])
        removed = [s.id for s in corpus.samples[1:]]
        return (
            make_corpus(
                corpus.kind,
                tuple(kept),
                created_at=corpus.manifest.created_at,
                dedup_applied=True,
                dedup_threshold=threshold,
            ),
            removed,
        )

    token_sets: list[frozenset[str]] = []
    inverted: dict[str, list[int]] = {}
    kept_empty = -1  # index of the first kept sample with no tokens

    for s in corpus.samples:
        toks = frozenset(token_seq(s.text))
        if not toks:
            # Empty vs empty is similarity 1.0; empty vs non-empty is 0.
            if kept_empty >= 0:
                removed.append(s.id)
                continue
            kept_empty = len(kept)
            kept.append(s)
            token_sets.append(toks)
            continue
        candidates: set[int] = set()
        for t in toks:
            candidates.update(inverted.get(t, ()))
        dup = False
        for ci in sorted(candidates):
            if jaccard(toks, token_sets[ci]) >= threshold:
                dup = True
                break
        if dup:
            removed.append(s.id)
            continue
        idx = len(kept)
        kept.append(s)
        token_sets.append(toks)
        for t in toks:
            inverted.setdefault(t, []).append(idx)

    return (
        make_corpus(
            corpus.kind,
            tuple(kept),
            created_at=corpus.manifest.created_at,
            dedup_applied=True,
            dedup_threshold=threshold,
        ),
        removed,
    )


def with_kind(corpus: Corpus, kind: str) -> Corpus:
    """The same corpus re-tagged with a different kind."""
    if kind not in CORPUS_KINDS:
        raise ConfigError(f"unknown corpus kind {kind!r}; expected one of {CORPUS_KINDS}")
    return replace(corpus, kind=kind)

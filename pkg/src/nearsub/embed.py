"""Embedding gateway: produce, persist and load fixed-dimension embeddings.

Two backends: ``external-api`` (generic HTTP embedding service, batched with
retries and an optional on-disk cache) and ``mock-hash`` (a deterministic
feature-hashing embedder used for tests and offline runs).

On-disk format ("EMB1"): magic ``EMB1``, u32 LE dim, u64 LE row count, u8
normalized flag, row-major IEEE-754 f32 LE data, then an id table of u32
length-prefixed UTF-8 strings in row order.
"""

from __future__ import annotations

import hashlib
import io
import logging
import os
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Corpus, token_seq, _TOKEN_RE
from .errors import ConfigError, ExternalServiceError, InputDataError

log = logging.getLogger("nearsub.embed")

MAGIC = b"EMB1"
BACKENDS = ("mock-hash", "external-api")


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = "mock-hash"
    dim: int = 1536
    max_tokens: int = 8191
    endpoint: str = ""
    model_name: str = ""
    normalize: bool = False
    batch_size: int = 64
    max_retries: int = 3
    token_env: str = ""
    workers: int = 4
    timeout: float = 60.0

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown embedder backend {self.backend!r}; expected one of {BACKENDS}")
        if self.dim < 2:
            raise ConfigError(f"embedding dim must be >= 2, got {self.dim}")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.backend == "external-api" and not self.endpoint:
            raise ConfigError("external-api backend requires an endpoint URL")


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Dense row-major float32 vectors keyed by sample id.

    Immutable once constructed; safe to share across threads.
    """

    ids: tuple[str, ...]
    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", data)
        if data.ndim != 2:
            raise InputDataError(f"embedding data must be 2-D, got shape {data.shape}")
        if data.shape[0] != len(self.ids):
            raise InputDataError(
                f"row count {data.shape[0]} does not match id count {len(self.ids)}"
            )
        if data.shape[1] < 1:
            raise InputDataError("embedding dim must be positive")
        if len(set(self.ids)) != len(self.ids):
            raise InputDataError("duplicate ids in embedding matrix")
        if not np.all(np.isfinite(data)):
            raise InputDataError("embedding data contains NaN or Inf")
        if self.normalized and data.shape[0]:
            norms = np.linalg.norm(data.astype(np.float64), axis=1)
            nonzero = norms > 0
            if nonzero.any() and not np.allclose(norms[nonzero], 1.0, atol=1e-4, rtol=0):
                worst = float(np.abs(norms[nonzero] - 1.0).max())
                raise InputDataError(
                    f"matrix flagged normalized but a row norm deviates by {worst:.2e}"
                )

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, sample_id: str) -> np.ndarray:
        return self.data[self.ids.index(sample_id)]


def _hash64(token: str, person: bytes) -> int:
    """Fixed 64-bit hash: little-endian BLAKE2b-64 with a domain tag."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, person=person).digest()
    return int.from_bytes(digest, "little")


def bucket_hash(token: str) -> int:
    return _hash64(token, b"nearsub-bucket")


def sign_hash(token: str) -> int:
    return _hash64(token, b"nearsub-sign")


def mock_embed(text: str, dim: int, normalize: bool = False) -> np.ndarray:
    """Deterministic feature-hashing embedding.

    Each token t contributes +-1 to bucket ``bucket_hash(t) % dim``; the sign
    is +1 when ``sign_hash(t)`` is even. Identical across runs and platforms.
    Empty text maps to the zero vector (left unnormalized).
    """
    if dim < 2:
        raise ConfigError(f"embedding dim must be >= 2, got {dim}")
    vec = np.zeros(dim, dtype=np.float64)
    for tok in token_seq(text):
        bucket = bucket_hash(tok) % dim
        sign = 1.0 if sign_hash(tok) % 2 == 0 else -1.0
        vec[bucket] += sign
    if normalize:
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
    return vec.astype(np.float32)


def truncate_to_tokens(text: str, max_tokens: int) -> str:
    """Cut ``text`` after its ``max_tokens``-th token, preserving original bytes."""
    count = 0
    for m in _TOKEN_RE.finditer(text):
        count += 1
        if count == max_tokens:
            return text[: m.end()]
    return text


def _l2_normalize_rows(data: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(data.astype(np.float64), axis=1)
    out = data.astype(np.float64)
    nonzero = norms > 0
    out[nonzero] /= norms[nonzero, None]
    return out.astype(np.float32)


class _EmbedCache:
    """Disk cache of external-API responses keyed by (model name, text digest)."""

    def __init__(self, root):
        self.root = root
        os.makedirs(root, exist_ok=True)

    def _path(self, model: str, text: str) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(model.encode("utf-8"))
        h.update(b"\x00")
        h.update(text.encode("utf-8"))
        return os.path.join(self.root, h.hexdigest() + ".f32")

    def get(self, model: str, text: str, dim: int) -> np.ndarray | None:
        path = self._path(model, text)
        if not os.path.exists(path):
            return None
        raw = np.fromfile(path, dtype="<f4")
        if raw.shape[0] != dim:
            return None
        return raw

    def put(self, model: str, text: str, vec: np.ndarray) -> None:
        path = self._path(model, text)
        tmp = path + ".tmp"
        np.asarray(vec, dtype="<f4").tofile(tmp)
        os.replace(tmp, path)


def _post_batch(config: EmbedderConfig, texts: list[str], first_id: str, session) -> list[np.ndarray]:
    """POST one batch to the embedding service, retrying with exponential backoff."""
    import requests

    headers = {}
    if config.token_env:
        token = os.environ.get(config.token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
    body = {"model": config.model_name, "input": texts}
    http = session if session is not None else requests

    last_error = ""
    for attempt in range(config.max_retries + 1):
        if attempt:
            time.sleep(min(2.0 ** (attempt - 1) * 0.5, 8.0))
        try:
            resp = http.post(config.endpoint, json=body, headers=headers, timeout=config.timeout)
        except Exception as exc:  # transport failure
            last_error = f"transport failure: {exc}"
            continue
        if resp.status_code // 100 != 2:
            last_error = f"HTTP {resp.status_code}"
            continue
        try:
            payload = resp.json()
        except ValueError:
            last_error = "response is not valid JSON"
            continue
        items = payload.get("data") if isinstance(payload, dict) else payload
        if not isinstance(items, list) or len(items) != len(texts):
            last_error = f"expected {len(texts)} embeddings, got {items!r:.80}"
            continue
        vectors = []
        ok = True
        for item in items:
            emb = item.get("embedding") if isinstance(item, dict) else None
            if emb is None or len(emb) != config.dim:
                got = len(emb) if emb is not None else "none"
                last_error = f"response dimension {got} != configured {config.dim}"
                ok = False
                break
            vectors.append(np.asarray(emb, dtype=np.float32))
        if ok:
            return vectors
    raise ExternalServiceError(
        f"embedding batch starting at sample {first_id!r} failed after "
        f"{config.max_retries + 1} attempts: {last_error}"
    )


def embed_corpus(
    corpus: Corpus,
    config: EmbedderConfig,
    *,
    cache_dir=None,
    session=None,
) -> EmbeddingMatrix:
    """One embedding row per sample, in corpus order.

    Over-long texts are truncated at the max_tokens token boundary (and the
    truncation logged). With the mock backend this is a pure function of
    (corpus, config).
    """
    if len(corpus) == 0:
        raise InputDataError("cannot embed an empty corpus")

    texts = []
    for s in corpus.samples:
        t = truncate_to_tokens(s.text, config.max_tokens)
        if len(t) != len(s.text):
            log.info("truncated sample %s to %d tokens", s.id, config.max_tokens)
        texts.append(t)

    if config.backend == "mock-hash":
        data = np.stack([mock_embed(t, config.dim, normalize=False) for t in texts])
    else:
        data = _embed_external(corpus, texts, config, cache_dir, session)

    if config.normalize:
        data = _l2_normalize_rows(data)
    return EmbeddingMatrix(ids=corpus.ids(), data=data, normalized=config.normalize)


def _embed_external(corpus, texts, config, cache_dir, session) -> np.ndarray:
    cache = _EmbedCache(cache_dir) if cache_dir else None
    n = len(texts)
    data = np.empty((n, config.dim), dtype=np.float32)
    pending_idx = []
    for i, t in enumerate(texts):
        cached = cache.get(config.model_name, t, config.dim) if cache else None
        if cached is not None:
            data[i] = cached
        else:
            pending_idx.append(i)

    batches = [pending_idx[i : i + config.batch_size] for i in range(0, len(pending_idx), config.batch_size)]

    def run_batch(batch):
        vecs = _post_batch(config, [texts[i] for i in batch], corpus.samples[batch[0]].id, session)
        return batch, vecs

    if batches:
        workers = max(1, min(config.workers, len(batches)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for batch, vecs in pool.map(run_batch, batches):
                for i, vec in zip(batch, vecs):
                    data[i] = vec
                    if cache:
                        cache.put(config.model_name, texts[i], vec)
    return data


def embeddings_to_bytes(m: EmbeddingMatrix) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", m.dim))
    buf.write(struct.pack("<Q", len(m.ids)))
    buf.write(struct.pack("<B", 1 if m.normalized else 0))
    buf.write(np.ascontiguousarray(m.data, dtype="<f4").tobytes())
    for sid in m.ids:
        raw = sid.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
    return buf.getvalue()


def save_embeddings(m: EmbeddingMatrix, path) -> None:
    """Write the EMB1 binary format; load_embeddings round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(embeddings_to_bytes(m))


def embeddings_digest(m: EmbeddingMatrix) -> str:
    """64-bit hex digest of the canonical EMB1 serialization."""
    return hashlib.blake2b(embeddings_to_bytes(m), digest_size=8).hexdigest()


def load_embeddings(path) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    header = struct.calcsize("<4sIQB")
    if len(blob) < header or blob[:4] != MAGIC:
        raise InputDataError(f"{path}: bad magic, not an EMB1 embedding file")
    _, dim, count, norm_flag = struct.unpack("<4sIQB", blob[:header])
    data_bytes = dim * count * 4
    if len(blob) < header + data_bytes:
        raise InputDataError(
            f"{path}: truncated data section, expected at least {header + data_bytes} bytes, "
            f"got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=dim * count, offset=header).reshape(count, dim)
    ids = []
    off = header + data_bytes
    for row in range(count):
        if off + 4 > len(blob):
            raise InputDataError(f"{path}: truncated id table at row {row}")
        (length,) = struct.unpack_from("<I", blob, off)
        off += 4
        if off + length > len(blob):
            raise InputDataError(f"{path}: truncated id table at row {row}")
        ids.append(blob[off : off + length].decode("utf-8"))
        off += length
    if off != len(blob):
        raise InputDataError(f"{path}: {len(blob) - off} trailing bytes after id table")
    if len(set(ids)) != len(ids):
        raise InputDataError(f"{path}: duplicate ids in id table")
    return EmbeddingMatrix(ids=tuple(ids), data=data.copy(), normalized=bool(norm_flag))

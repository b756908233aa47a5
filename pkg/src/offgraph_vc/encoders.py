"""Text embedding providers.

Embeddings are plain float64 numpy vectors. ``HashingEncoder`` is the offline
provider used by tests and the synthetic pipeline; ``HttpEncoder`` talks to a
remote service. Either can be wrapped in ``CachedEncoder``.
"""

from __future__ import annotations

import hashlib
import os
import re
import threading
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import httpx
import numpy as np

DEFAULT_DIM = 384

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EncoderError(RuntimeError):
    """Remote encoder failure. ``retryable`` marks transport problems."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class TextEncoder:
    provider_id = "base"

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = int(dim)

    def encode(self, text: str) -> np.ndarray:
        return self.encode_many([text])[0]

    def encode_many(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError

    def _check(self, texts: Sequence[str]) -> None:
        for t in texts:
            if not t or not t.strip():
                raise ValueError("cannot encode empty text")


class HashingEncoder(TextEncoder):
    """Signed feature hashing of unigrams and bigrams, L2-normalized.

    Similar token multisets give similar vectors, which keeps cosine
    retrieval meaningful without a neural model.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0, bigram_weight: float = 0.5):
        super().__init__(dim)
        self.seed = int(seed)
        self.bigram_weight = float(bigram_weight)
        self.provider_id = f"hashing-d{self.dim}-s{self.seed}"
        self._slot = lru_cache(maxsize=1 << 18)(self._slot_uncached)
        self._memo: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _slot_uncached(self, token: str) -> tuple[int, float]:
        h = hashlib.blake2b(f"{self.seed}\x00{token}".encode("utf-8"), digest_size=8).digest()
        v = int.from_bytes(h, "little")
        return v % self.dim, (1.0 if (v >> 63) & 1 else -1.0)

    def raw_counts(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        toks = _TOKEN_RE.findall(text.lower())
        slot = self._slot
        for t in toks:
            i, s = slot(t)
            vec[i] += s
        if self.bigram_weight:
            w = self.bigram_weight
            for a, b in zip(toks, toks[1:]):
                i, s = slot(a + " " + b)
                vec[i] += w * s
        return vec

    def encode_many(self, texts: Sequence[str]) -> np.ndarray:
        self._check(texts)
        out = np.empty((len(texts), self.dim))
        for row, text in enumerate(texts):
            cached = self._memo.get(text)
            if cached is None:
                vec = self.raw_counts(text)
                norm = np.linalg.norm(vec)
                if norm == 0.0:
                    # text without alphanumeric tokens: hash the raw string
                    i, s = self._slot("\x01" + text)
                    vec[i] = s
                    norm = 1.0
                cached = vec / norm
                with self._lock:
                    if len(self._memo) > 200_000:
                        self._memo.clear()
                    self._memo[text] = cached
            out[row] = cached
        return out


class HttpEncoder(TextEncoder):
    """Remote encoder: POST {"texts": [...]} -> {"vectors": [[...], ...]}."""

    def __init__(
        self,
        base_url: str,
        dim: int = DEFAULT_DIM,
        api_key_env: str = "ENCODER_API_KEY",
        model: str = "",
        timeout: float = 30.0,
        max_in_flight: int = 4,
        client: httpx.Client | None = None,
    ):
        super().__init__(dim)
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.provider_id = f"http:{self.base_url}:{model}"
        self._client = client or httpx.Client(timeout=timeout)
        self._api_key = os.environ.get(api_key_env, "")
        self._sem = threading.BoundedSemaphore(max_in_flight)

    def encode_many(self, texts: Sequence[str]) -> np.ndarray:
        self._check(texts)
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else {}
        payload: dict = {"texts": list(texts)}
        if self.model:
            payload["model"] = self.model
        with self._sem:
            try:
                resp = self._client.post(f"{self.base_url}/embeddings", json=payload, headers=headers)
            except httpx.TransportError as exc:
                raise EncoderError(f"encoder transport failure: {exc}", retryable=True) from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise EncoderError(f"encoder HTTP {resp.status_code}", retryable=True)
        if resp.status_code >= 400:
            raise EncoderError(f"encoder HTTP {resp.status_code}: {resp.text[:200]}")
        vectors = np.asarray(resp.json()["vectors"], dtype=np.float64)
        if vectors.shape != (len(texts), self.dim):
            raise EncoderError(f"encoder returned shape {vectors.shape}, expected {(len(texts), self.dim)}")
        if not np.all(np.isfinite(vectors)):
            raise EncoderError("encoder returned non-finite values")
        return vectors


class CachedEncoder(TextEncoder):
    """Disk-backed cache keyed by (provider id, content hash)."""

    def __init__(self, inner: TextEncoder, path: str | Path | None = None):
        super().__init__(inner.dim)
        self.inner = inner
        self.provider_id = inner.provider_id
        self.path = Path(path) if path else None
        self._store: dict[str, np.ndarray] = {}
        self._dirty = False
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with np.load(self.path, allow_pickle=False) as data:
                for key, row in zip(data["keys"], data["vectors"]):
                    self._store[str(key)] = row

    def _key(self, text: str) -> str:
        return f"{self.provider_id}|{content_hash(text)}"

    def encode_many(self, texts: Sequence[str]) -> np.ndarray:
        self._check(texts)
        keys = [self._key(t) for t in texts]
        with self._lock:
            missing = [i for i, k in enumerate(keys) if k not in self._store]
        if missing:
            uniq: dict[str, int] = {}
            for i in missing:
                uniq.setdefault(keys[i], i)
            vecs = self.inner.encode_many([texts[i] for i in uniq.values()])
            with self._lock:
                for k, v in zip(uniq, vecs):
                    self._store[k] = v
                self._dirty = True
        with self._lock:
            return np.stack([self._store[k] for k in keys])

    def __len__(self) -> int:
        return len(self._store)

    def flush(self) -> None:
        if not self.path or not self._dirty:
            return
        with self._lock:
            keys = sorted(self._store)
            vectors = np.stack([self._store[k] for k in keys]) if keys else np.zeros((0, self.dim))
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp = self.path.with_name(self.path.name + ".tmp.npz")
            np.savez(tmp, keys=np.array(keys), vectors=vectors)
            os.replace(tmp, self.path)
            self._dirty = False

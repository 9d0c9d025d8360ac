"""Text embeddings behind a small provider interface.

The default provider hashes tokens into buckets so every test runs offline;
model-backed providers (sentence-transformers, an HTTP endpoint) plug in
behind the same ``embed`` / ``model_id`` surface.
"""
from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass
from typing import Dict, List, Optional, Protocol, Sequence

import numpy as np
import requests

from agentgraph.errors import (
    BackendError,
    DimensionMismatchError,
    EmptyTextError,
    ZeroVectorError,
)

_TOKEN = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other) -> bool:
        return isinstance(other, EmbeddingVector) and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.values.tobytes())


class EmbeddingProvider(Protocol):
    model_id: str

    def embed(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        ...


# ---------- Similarity ----------
def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"cannot compare dim {a.dim} with dim {b.dim}")
    na, nb = np.linalg.norm(a.values), np.linalg.norm(b.values)
    if na == 0 or nb == 0:
        raise ZeroVectorError("cosine similarity is undefined for an all-zero vector")
    if np.array_equal(a.values, b.values):
        return 1.0
    return float(np.clip(np.dot(a.values, b.values) / (na * nb), -1.0, 1.0))


def similarity_matrix(rows: Sequence[EmbeddingVector], cols: Sequence[EmbeddingVector]) -> np.ndarray:
    """Pairwise cosine matrix, shape (len(rows), len(cols))."""
    if not rows or not cols:
        return np.zeros((len(rows), len(cols)))
    a = np.vstack([v.values for v in rows])
    b = np.vstack([v.values for v in cols])
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"cannot compare dim {a.shape[1]} with dim {b.shape[1]}")
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ZeroVectorError("cosine similarity is undefined for an all-zero vector")
    sims = np.clip((a / na) @ (b / nb).T, -1.0, 1.0)
    same = (a[:, None, :] == b[None, :, :]).all(axis=2)
    sims[same] = 1.0
    return sims


# ---------- Deterministic hash provider ----------
def tokenize(text: str) -> List[str]:
    return _TOKEN.findall(text.lower())


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


def deterministic_embed(text: str, dim: int = 256) -> EmbeddingVector:
    if dim < 8:
        raise ValueError(f"dim must be at least 8, got {dim}")
    tokens = tokenize(text)
    if not tokens:
        raise EmptyTextError(f"no tokens to embed in {text!r}")
    counts = np.zeros(dim)
    for token in tokens:
        counts[_bucket(token, dim)] += 1.0
    return EmbeddingVector(counts / np.linalg.norm(counts))


class HashEmbeddingProvider:
    def __init__(self, dim: int = 256):
        if dim < 8:
            raise ValueError(f"dim must be at least 8, got {dim}")
        self.dim = dim
        self.model_id = f"hash-{dim}"

    def embed(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        return [deterministic_embed(t, self.dim) for t in texts]


# ---------- Model-backed adapters ----------
class SentenceTransformerProvider:
    """Wraps a sentence-transformers model (optional dependency)."""

    def __init__(self, model: str = "all-MiniLM-L6-v2"):
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(model)
        self._lock = threading.Lock()
        self.model_id = model

    def embed(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        with self._lock:
            arr = self._model.encode(list(texts), convert_to_numpy=True, normalize_embeddings=True,
                                     show_progress_bar=False)
        return [EmbeddingVector(row) for row in arr]


class HttpEmbeddingProvider:
    """POSTs {"model", "input"} and reads an OpenAI-style {"data": [{"embedding": [...]}]}."""

    def __init__(self, endpoint: str, model: str, dim: Optional[int] = None, timeout: float = 30.0,
                 token: Optional[str] = None):
        self.endpoint = endpoint
        self.model_id = model
        self.dim = dim
        self.timeout = timeout
        self._headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._cache: Dict[str, EmbeddingVector] = {}
        self._lock = threading.Lock()

    def embed(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        with self._lock:
            missing = [t for t in dict.fromkeys(texts) if t not in self._cache]
            if missing:
                for text, vec in zip(missing, self._request(missing)):
                    self._cache[text] = vec
            return [self._cache[t] for t in texts]

    def _request(self, texts: List[str]) -> List[EmbeddingVector]:
        try:
            r = requests.post(self.endpoint, json={"model": self.model_id, "input": texts},
                              headers=self._headers, timeout=self.timeout)
            r.raise_for_status()
            rows = [item["embedding"] for item in r.json()["data"]]
        except (requests.RequestException, KeyError, TypeError, ValueError) as e:
            raise BackendError(f"embedding request to {self.endpoint} failed: {e}") from e
        vectors = [EmbeddingVector(row) for row in rows]
        if self.dim is not None and any(v.dim != self.dim for v in vectors):
            raise DimensionMismatchError(f"endpoint returned vectors not of dim {self.dim}")
        return vectors

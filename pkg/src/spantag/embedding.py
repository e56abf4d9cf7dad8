"""Token embedding front-end: a deterministic toy embedder, and max-pool
alignment of externally precomputed sub-token vectors."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import kernels


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class EmbedderConfig:
    d: int = 64
    seed: int = 0
    mode: str = "toy"

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError("embedding dimension must be positive")
        if self.mode not in ("toy", "precomputed"):
            raise ValueError(f"unknown embedder mode {self.mode!r}")


@dataclass(frozen=True)
class SubtokenEmbeddingSequence:
    """Sub-token vectors plus, per token, how many consecutive rows belong to it."""

    vectors: np.ndarray
    groups: tuple[int, ...]

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise EmbeddingError("sub-token vectors must form a 2-d matrix")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "groups", tuple(int(g) for g in self.groups))
        if any(g <= 0 for g in self.groups):
            raise EmbeddingError("empty grouping range: every token needs at least one sub-token")
        if sum(self.groups) != vectors.shape[0]:
            raise EmbeddingError(
                f"grouping not a partition: groups cover {sum(self.groups)} of {vectors.shape[0]} rows"
            )

    @property
    def n_tokens(self) -> int:
        return len(self.groups)

    def ranges(self) -> tuple[np.ndarray, np.ndarray]:
        ends = np.cumsum(np.asarray(self.groups, dtype=np.int64))
        starts = ends - np.asarray(self.groups, dtype=np.int64)
        return starts, ends


def _token_vector(token: str, seed: int, d: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}\x00{token}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.uniform(-1.0, 1.0, size=d)


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d)
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def toy_embed(tokens: Sequence[str], cfg: EmbedderConfig) -> np.ndarray:
    """Embed tokens without any pretrained weights.

    Token ``t`` maps to ``uniform(-1, 1, d)`` drawn from a PCG64 generator
    seeded with the little-endian 8-byte BLAKE2b digest of
    ``f"{seed}\\x00{t}"``; the standard sinusoidal position encoding of its
    position is then added.
    """
    if cfg.mode != "toy":
        raise EmbeddingError("toy_embed requires an embedder in toy mode")
    n = len(tokens)
    out = np.empty((n, cfg.d))
    for i, tok in enumerate(tokens):
        out[i] = _token_vector(tok, cfg.seed, cfg.d)
    return out + sinusoidal_positions(n, cfg.d)


def align_subtokens(sub: SubtokenEmbeddingSequence) -> np.ndarray:
    """Max-pool each token's sub-token rows into a single row."""
    starts, ends = sub.ranges()
    out, _ = kernels.segment_max(np.ascontiguousarray(sub.vectors), starts, ends)
    return out


def load_precomputed(
    path: str | Path, expected_d: int, documents: Sequence | None = None
) -> Iterator[tuple[int, SubtokenEmbeddingSequence]]:
    """Yield ``(doc_id, sequence)`` from a JSONL file of sub-token embeddings.

    When ``documents`` is given, each record's token count is checked against
    the document it points to.
    """
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            where = f"{path}:{lineno}"
            dim = rec.get("dim")
            if dim != expected_d:
                raise EmbeddingError(f"{where}: dimension mismatch, expected {expected_d}, got {dim}")
            vectors = np.asarray(rec["vectors"], dtype=np.float64)
            if vectors.size and (vectors.ndim != 2 or vectors.shape[1] != dim):
                raise EmbeddingError(f"{where}: vectors do not all have dimension {dim}")
            vectors = vectors.reshape(-1, dim)
            if not np.all(np.isfinite(vectors)):
                raise EmbeddingError(f"{where}: non-finite embedding values")
            try:
                seq = SubtokenEmbeddingSequence(vectors, tuple(rec["groups"]))
            except EmbeddingError as exc:
                raise EmbeddingError(f"{where}: {exc}") from None
            doc_id = int(rec["doc_id"])
            if documents is not None:
                if not 0 <= doc_id < len(documents):
                    raise EmbeddingError(f"{where}: doc_id {doc_id} has no matching document")
                if seq.n_tokens != documents[doc_id].n:
                    raise EmbeddingError(
                        f"{where}: grouping has {seq.n_tokens} tokens, document {doc_id} has {documents[doc_id].n}"
                    )
            yield doc_id, seq


def save_precomputed(records: Sequence[tuple[int, SubtokenEmbeddingSequence]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, seq in records:
            rec = {
                "doc_id": doc_id,
                "dim": int(seq.vectors.shape[1]),
                "groups": list(seq.groups),
                "vectors": seq.vectors.tolist(),
            }
            fh.write(json.dumps(rec) + "\n")

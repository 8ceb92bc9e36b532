"""Sentence-embedding providers and the binary cell-embedding cache.

Two built-in deterministic providers stand in for the frozen pre-trained
encoder: a feature-hashing encoder (tokens share buckets across prompts, so
lexically similar sentences get similar embeddings) and a "random frozen"
encoder whose vectors carry no structure at all (the no-pretraining ablation).
Caches produced by the external exporter use the same file format and are
consumed through read_cache.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, schema_hash
from .errors import DataError
from .prompts import render_prompt, render_raw

PROVIDER_HASHING = 1
PROVIDER_RANDOM = 2
PROVIDER_EXTERNAL = 3


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    out, cur = [], []
    for ch in text.lower():
        if ch.isalnum():
            cur.append(ch)
        else:
            if cur:
                out.append("".join(cur))
                cur = []
    if cur:
        out.append("".join(cur))
    return out


class HashingEncoder:
    """Signed feature-hashing encoder with mean pooling and L2 normalization."""

    provider_id = PROVIDER_HASHING

    def __init__(self, dim: int, seed: int = 0):
        if dim < 2:
            raise DataError("hashing encoder needs dim >= 2")
        self.dim = dim
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=False)

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(
            token.encode("utf-8"), key=self._key, digest_size=16
        ).digest()
        bucket = int.from_bytes(digest[:8], "little") % self.dim
        sign = 1.0 if digest[8] & 1 else -1.0
        vec = np.zeros(self.dim)
        vec[bucket] = sign
        return vec

    def embed(self, prompt: str) -> np.ndarray:
        tokens = tokenize(prompt)
        if not tokens:
            return np.zeros(self.dim)
        acc = np.zeros(self.dim)
        for tok in tokens:
            acc += self._token_vector(tok)
        acc /= len(tokens)
        norm = np.linalg.norm(acc)
        if norm > 0:
            acc /= norm
        return acc


class RandomFrozenEncoder:
    """Structure-free encoder: every distinct prompt maps to an independent
    pseudorandom direction. Per-token draws are keyed by the whole prompt so
    that related sentences are no closer than unrelated ones.
    """

    provider_id = PROVIDER_RANDOM

    def __init__(self, dim: int, seed: int = 0):
        if dim < 2:
            raise DataError("random frozen encoder needs dim >= 2")
        self.dim = dim
        self.seed = seed

    def embed(self, prompt: str) -> np.ndarray:
        tokens = tokenize(prompt)
        digest = hashlib.blake2b(prompt.encode("utf-8"), digest_size=8).digest()
        prompt_key = int.from_bytes(digest, "little")
        n = max(len(tokens), 1)
        acc = np.zeros(self.dim)
        for k in range(n):
            rng = np.random.default_rng([self.seed, prompt_key, k])
            acc += rng.standard_normal(self.dim)
        acc /= n
        norm = np.linalg.norm(acc)
        if norm > 0:
            acc /= norm
        return acc


def make_provider(kind: str, dim: int, seed: int):
    if kind == "hashing":
        return HashingEncoder(dim, seed)
    if kind == "random":
        return RandomFrozenEncoder(dim, seed)
    raise DataError(f"unknown provider kind '{kind}'")


@dataclass
class CellEmbeddingMatrix:
    values: np.ndarray  # (N, m, d) float32
    provider_id: int
    seed: int
    schema_hash: int

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


def embed_dataset(dataset: Dataset, provider, variant: str = "prompts",
                  memo: dict | None = None) -> CellEmbeddingMatrix:
    """Embed every cell of an imputed dataset. variant="raw" skips templates."""
    render = render_prompt if variant == "prompts" else render_raw
    n, m, d = dataset.n, dataset.m, provider.dim
    values = np.empty((n, m, d), dtype=np.float32)
    cache = {} if memo is None else memo
    for i, row in enumerate(dataset.rows):
        for j, spec in enumerate(dataset.schema.features):
            text = render(spec, row[j])
            vec = cache.get(text)
            if vec is None:
                vec = provider.embed(text).astype(np.float32)
                cache[text] = vec
            values[i, j] = vec
    if not np.all(np.isfinite(values)):
        raise DataError("non-finite value produced by embedding provider")
    return CellEmbeddingMatrix(
        values=values,
        provider_id=provider.provider_id,
        seed=provider.seed,
        schema_hash=schema_hash(dataset.schema),
    )


# --- CEMB binary cache ------------------------------------------------------
# Little-endian layout: magic "CEMB", version u32=1, N u64, m u32, d u32,
# provider-id u32, seed u64, schema-hash u64, then N*m*d f32 values with the
# row index outermost and the vector component innermost.

CACHE_MAGIC = b"CEMB"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIQIIIQQ")


def write_cache(matrix: CellEmbeddingMatrix, path) -> None:
    path = Path(path)
    if not path.parent.exists():
        raise DataError(f"parent directory does not exist: {path.parent}")
    payload = np.ascontiguousarray(matrix.values, dtype="<f4")
    header = _HEADER.pack(
        CACHE_MAGIC, CACHE_VERSION,
        matrix.n, matrix.m, matrix.dim,
        matrix.provider_id, matrix.seed, matrix.schema_hash,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_cache(path) -> CellEmbeddingMatrix:
    path = Path(path)
    if not path.exists():
        raise DataError(f"cache file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise DataError(f"corrupt cache (truncated header): {path}")
    magic, version, n, m, d, provider_id, seed, sch_hash = _HEADER.unpack(
        blob[:_HEADER.size]
    )
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise DataError(f"incompatible cache (bad magic/version): {path}")
    expected = _HEADER.size + n * m * d * 4
    if len(blob) != expected:
        raise DataError(
            f"corrupt cache: expected {expected} bytes, found {len(blob)}: {path}"
        )
    values = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(n, m, d)
    return CellEmbeddingMatrix(
        values=values.copy(),
        provider_id=provider_id,
        seed=seed,
        schema_hash=sch_hash,
    )


def check_cache_against(matrix: CellEmbeddingMatrix, dataset: Dataset,
                        expect_dim: int | None = None) -> None:
    """Validate a cache against the dataset it will be trained on."""
    if matrix.schema_hash != schema_hash(dataset.schema):
        raise DataError("cache built for different schema")
    if matrix.n != dataset.n or matrix.m != dataset.m:
        raise DataError(
            f"cache shape ({matrix.n}x{matrix.m}) does not match dataset "
            f"({dataset.n}x{dataset.m})"
        )
    if expect_dim is not None and matrix.dim != expect_dim:
        raise DataError(
            f"cache dimension {matrix.dim} does not match configured {expect_dim}"
        )


def dump_prompts(dataset: Dataset, path, variant: str = "prompts") -> int:
    """Write all rendered prompts as newline-delimited JSON for the exporter.

    First line is a header {"n_rows", "n_cols", "schema_hash"}; each following
    line is {"i", "j", "text"}. Returns the number of prompt records.
    """
    render = render_prompt if variant == "prompts" else render_raw
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "n_rows": dataset.n,
            "n_cols": dataset.m,
            "schema_hash": schema_hash(dataset.schema),
        }
        fh.write(json.dumps(header) + "\n")
        for i, row in enumerate(dataset.rows):
            for j, spec in enumerate(dataset.schema.features):
                rec = {"i": i, "j": j, "text": render(spec, row[j])}
                fh.write(json.dumps(rec) + "\n")
                count += 1
    return count

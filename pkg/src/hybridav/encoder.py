"""Document featurization and the document-embedding layer.

Documents are turned into fixed-length vectors by hashing their character
n-grams with 64-bit FNV-1a into ``d_feat`` buckets (bucket = hash mod d_feat),
log-scaling the counts with ``log(1 + count)`` and L2-normalizing. The hash is
taken over the UTF-8 bytes of each n-gram, so results do not depend on the
platform or on Python's per-process string hash salt.

A single affine-tanh layer then maps the feature vector to the document
embedding consumed by the metric-learning layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Protocol, Sequence

import numpy as np

from ._layers import affine_tanh, affine_tanh_backward, check_dims
from .errors import DimensionMismatch, DocumentTooShort, InvalidConfig

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

DEFAULT_NGRAMS = (2, 3, 4, 5)
DEFAULT_D_FEAT = 4096
DEFAULT_MIN_TOKENS = 32


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    author_id: str
    fandom_id: str

    def __post_init__(self):
        for name in ("id", "author_id", "fandom_id"):
            if not getattr(self, name):
                raise InvalidConfig(f"document {name} must be non-empty")

    @property
    def n_tokens(self) -> int:
        return len(self.text.split())


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


@lru_cache(maxsize=1 << 18)
def _hash_ngram(gram: str) -> int:
    return fnv1a_64(gram.encode("utf-8"))


def _ngram_hashes_ascii(raw: np.ndarray, n: int) -> np.ndarray:
    m = raw.shape[0] - n + 1
    if m <= 0:
        return np.empty(0, dtype=np.uint64)
    h = np.full(m, FNV_OFFSET, dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    for k in range(n):
        h ^= raw[k:k + m]
        h *= prime  # uint64 arithmetic wraps mod 2**64
    return h


def ngram_hashes(text: str, n: int) -> np.ndarray:
    """FNV-1a hashes of all character n-grams of ``text`` (in order)."""
    if text.isascii():
        raw = np.frombuffer(text.encode("ascii"), dtype=np.uint8).astype(np.uint64)
        return _ngram_hashes_ascii(raw, n)
    grams = [text[i:i + n] for i in range(len(text) - n + 1)]
    return np.fromiter((_hash_ngram(g) for g in grams), dtype=np.uint64, count=len(grams))


def _validate_featurize_args(n_grams: Iterable[int], d_feat: int) -> tuple[int, ...]:
    orders = tuple(sorted(set(int(n) for n in n_grams)))
    if not orders or any(n not in (2, 3, 4, 5) for n in orders):
        raise InvalidConfig(f"n-gram orders must be a non-empty subset of {{2,3,4,5}}, got {orders}")
    if d_feat < 64:
        raise InvalidConfig(f"d_feat must be >= 64, got {d_feat}")
    return orders


def featurize(doc: Document | str, n_grams: Iterable[int] = DEFAULT_NGRAMS,
              d_feat: int = DEFAULT_D_FEAT, min_tokens: int = DEFAULT_MIN_TOKENS) -> np.ndarray:
    """Hashed, log-scaled, L2-normalized character n-gram vector.

    A document without any n-gram of the requested orders yields the zero
    vector. Raises :class:`DocumentTooShort` when the whitespace token count
    is below ``min_tokens``.
    """
    orders = _validate_featurize_args(n_grams, d_feat)
    text = doc.text if isinstance(doc, Document) else doc
    n_tok = len(text.split())
    if n_tok < min_tokens:
        ident = doc.id if isinstance(doc, Document) else "<text>"
        raise DocumentTooShort(f"document {ident} has {n_tok} tokens, need >= {min_tokens}")

    hashes = [ngram_hashes(text, n) for n in orders]
    allh = np.concatenate(hashes) if hashes else np.empty(0, dtype=np.uint64)
    buckets = (allh % np.uint64(d_feat)).astype(np.int64)
    counts = np.bincount(buckets, minlength=d_feat).astype(np.float64)
    vec = np.log1p(counts)
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def featurize_many(docs: Sequence[Document | str], n_grams=DEFAULT_NGRAMS,
                   d_feat: int = DEFAULT_D_FEAT, min_tokens: int = DEFAULT_MIN_TOKENS) -> np.ndarray:
    out = np.zeros((len(docs), d_feat))
    for i, doc in enumerate(docs):
        out[i] = featurize(doc, n_grams, d_feat, min_tokens)
    return out


@dataclass
class EncoderParams:
    weight: np.ndarray  # (d_emb, d_feat)
    bias: np.ndarray    # (d_emb,)

    @classmethod
    def init(cls, d_feat: int, d_emb: int, rng: np.random.Generator, scale: float = 1.0):
        return cls(weight=rng.normal(0.0, scale, size=(d_emb, d_feat)),
                   bias=np.zeros(d_emb))

    @classmethod
    def zeros(cls, d_feat: int, d_emb: int):
        return cls(np.zeros((d_emb, d_feat)), np.zeros(d_emb))

    def arrays(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}


def encode(f: np.ndarray, p: EncoderParams) -> np.ndarray:
    """Document embedding ``tanh(weight @ f + bias)``; accepts a batch of rows."""
    return affine_tanh(f, p.weight, p.bias)


def encode_backward(f: np.ndarray, p: EncoderParams, upstream: np.ndarray,
                    out: np.ndarray | None = None):
    """Exact gradients of ``sum(upstream * encode(f, p))``.

    Returns ``({"weight": ..., "bias": ...}, d_f)``.
    """
    check_dims(f, p.weight, "feature vector")
    if out is None:
        out = encode(f, p)
    if upstream.shape != out.shape:
        raise DimensionMismatch(f"upstream gradient shape {upstream.shape} != output {out.shape}")
    dw, db, df = affine_tanh_backward(f, p.weight, out, upstream)
    return {"weight": dw, "bias": db}, df


class DocumentEncoder(Protocol):
    """What the rest of the pipeline needs from an encoder.

    ``features`` turns documents into whatever input representation the
    encoder consumes (cached by the trainer), ``forward`` maps a batch of
    those to embeddings, ``backward`` returns parameter gradients.
    """

    params: object

    def features(self, docs: Sequence[Document]) -> np.ndarray: ...

    def forward(self, feats: np.ndarray) -> np.ndarray: ...

    def backward(self, feats: np.ndarray, out: np.ndarray, upstream: np.ndarray) -> dict: ...


class HashedNgramEncoder:
    """Default encoder: hashed character n-grams followed by one affine-tanh layer."""

    def __init__(self, params: EncoderParams, n_grams=DEFAULT_NGRAMS,
                 min_tokens: int = DEFAULT_MIN_TOKENS):
        self.params = params
        self.n_grams = tuple(n_grams)
        self.min_tokens = min_tokens

    @property
    def d_feat(self) -> int:
        return self.params.weight.shape[1]

    @property
    def d_emb(self) -> int:
        return self.params.weight.shape[0]

    def features(self, docs: Sequence[Document]) -> np.ndarray:
        return featurize_many(docs, self.n_grams, self.d_feat, self.min_tokens)

    def forward(self, feats: np.ndarray) -> np.ndarray:
        return encode(feats, self.params)

    def backward(self, feats, out, upstream) -> dict:
        grads, _ = encode_backward(feats, self.params, upstream, out)
        return grads

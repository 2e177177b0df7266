"""Text encoders mapping a (prev, next) pair to a fixed feature vector.

The default encoder is a deterministic hashed bag-of-words: offline, fast,
and reproducible across machines. Pair features follow the usual sentence-pair
recipe: [a, b, a*b, |a-b|].
"""

from __future__ import annotations

import hashlib
import string

import numpy as np

from . import SchemaError

DEFAULT_DIM = 256


class HashedTextEncoder:
    """L2-normalized hashed unigram counts."""

    name = "hashed"

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim

    def fingerprint(self) -> str:
        return f"hashed:{self.dim}"

    def _bucket(self, token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") % self.dim

    def encode(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float32)
        for raw in text.split():
            token = raw.strip(string.punctuation).lower()
            if token:
                vec[self._bucket(token)] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        return np.stack([self.encode(t) for t in texts])


ENCODERS = {"hashed": HashedTextEncoder}


def make_encoder(name: str, dim: int = DEFAULT_DIM):
    if name not in ENCODERS:
        raise SchemaError(f"unknown encoder {name!r}; available: {sorted(ENCODERS)}")
    return ENCODERS[name](dim=dim)


def pair_features(encoder, prevs: list[str], nexts: list[str]) -> np.ndarray:
    a = encoder.encode_batch(prevs)
    b = encoder.encode_batch(nexts)
    return np.concatenate([a, b, a * b, np.abs(a - b)], axis=1)

"""Diversity and relevance metrics.

BLEU here is sentence-level, unsmoothed, one reference at a time:
BP * exp(sum_{k=1..n} (1/n) * log p_k) with clipped modified precisions,
where any zero precision collapses the score to 0 and
BP = min(1, exp(1 - r/h)). The repetition filter imports `bleu_n` from this
module so filtering and evaluation agree bit-for-bit.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import AllTraitsUnscorable, ConfigError
from .providers.base import ChatProvider, EmbeddingProvider
from .providers.types import ChatRequest
from .prompts import render
from .specification import Persona
from .textproc import ngrams, tokenize

log = logging.getLogger(__name__)

DEFAULT_NGRAM_ORDERS = (1, 2, 3)
STORY_CHUNK_TOKENS = 512

_NUMBER = re.compile(r"\d+(?:\.\d+)?|\.\d+")


class CorpusRole(Enum):
    ELEMENT = "element"
    FULL_STORY = "full_story"


@dataclass(frozen=True)
class Corpus:
    """Items to compare pairwise: (id, text) with unique ids."""

    items: tuple[tuple[str, str], ...]
    role: CorpusRole = CorpusRole.ELEMENT

    def __post_init__(self):
        ids = [i for i, _ in self.items]
        if len(set(ids)) != len(ids):
            raise ConfigError("corpus ids must be unique")

    def require_pairwise(self) -> None:
        if len(self.items) < 2:
            raise ConfigError(
                f"pairwise metrics need at least 2 items, got {len(self.items)}"
            )

    def texts(self) -> list[str]:
        return [t for _, t in self.items]


@dataclass
class MetricsReport:
    ws: float | None = None
    ss: float | None = None
    per_ngram: dict[int, float] = field(default_factory=dict)
    similarity: float | None = None
    emb_rv: float | None = None
    llm_rv: float | None = None
    ngram_orders: tuple[int, ...] = DEFAULT_NGRAM_ORDERS
    embedder_model: str = ""

    def to_dict(self) -> dict:
        return {
            "ws": self.ws,
            "ss": self.ss,
            "per_ngram": {str(n): v for n, v in sorted(self.per_ngram.items())},
            "similarity": self.similarity,
            "emb_rv": self.emb_rv,
            "llm_rv": self.llm_rv,
            "config": {
                "ngram_orders": list(self.ngram_orders),
                "embedder_model": self.embedder_model,
            },
        }


def bleu_n(hypothesis: str, reference: str, n: int) -> float:
    """Unsmoothed BLEU-n of one hypothesis against one reference."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    hyp = tokenize(hypothesis)
    ref = tokenize(reference)
    if not hyp or not ref:
        log.warning("bleu_n on empty hypothesis or reference; returning 0")
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        hyp_grams = Counter(ngrams(hyp, k))
        total = sum(hyp_grams.values())
        if total == 0:
            return 0.0
        ref_grams = Counter(ngrams(ref, k))
        clipped = sum(min(count, ref_grams[g]) for g, count in hyp_grams.items())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total) / n
    brevity = min(1.0, math.exp(1.0 - len(ref) / len(hyp)))
    return brevity * math.exp(log_sum)


def _ordered_pairs(count: int) -> Iterable[tuple[int, int]]:
    for i in range(count):
        for j in range(count):
            if i != j:
                yield i, j


def ngram_averages(
    corpus: Corpus, ngram_orders: Sequence[int] = DEFAULT_NGRAM_ORDERS
) -> dict[int, float]:
    """Mean BLEU-n over all ordered (hypothesis, reference) pairs, per order."""
    corpus.require_pairwise()
    texts = corpus.texts()
    sums = {n: 0.0 for n in ngram_orders}
    pairs = 0
    for i, j in _ordered_pairs(len(texts)):
        pairs += 1
        for n in ngram_orders:
            sums[n] += bleu_n(texts[i], texts[j], n)
    return {n: sums[n] / pairs for n in ngram_orders}


def word_similarity(
    corpus: Corpus, ngram_orders: Sequence[int] = DEFAULT_NGRAM_ORDERS
) -> float:
    """Leave-one-out n-gram repetitiveness: each item is hypothesis once
    against every other item, averaged over pairs and over the order set."""
    per_n = ngram_averages(corpus, ngram_orders)
    return sum(per_n.values()) / len(per_n)


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(va, vb) / (na * nb))


def sentence_similarity(corpus: Corpus, embed: EmbeddingProvider) -> float:
    """Leave-one-out mean embedding cosine over all ordered pairs."""
    corpus.require_pairwise()
    vectors = [v.values for v in embed.embed(corpus.texts())]
    total = 0.0
    pairs = 0
    for i, j in _ordered_pairs(len(vectors)):
        total += cosine(vectors[i], vectors[j])
        pairs += 1
    return total / pairs


def pooled_embedding(
    text: str, embed: EmbeddingProvider, chunk_tokens: int = STORY_CHUNK_TOKENS
) -> np.ndarray:
    """Embed long text by chunking on whitespace tokens, mean-pooling, and
    L2-normalizing the pooled vector."""
    words = text.split()
    if not words:
        raise ConfigError("cannot embed an empty story")
    chunks = [
        " ".join(words[i : i + chunk_tokens]) for i in range(0, len(words), chunk_tokens)
    ]
    vectors = np.asarray([v.values for v in embed.embed(chunks)], dtype=np.float64)
    pooled = vectors.mean(axis=0)
    norm = np.linalg.norm(pooled)
    return pooled / norm if norm > 0 else pooled


def story_similarity(stories: Corpus, embed: EmbeddingProvider) -> float:
    """Mean cosine over all unordered pairs of chunk-pooled story embeddings."""
    stories.require_pairwise()
    pooled = [pooled_embedding(text, embed) for text in stories.texts()]
    total = 0.0
    pairs = 0
    for i in range(len(pooled)):
        for j in range(i + 1, len(pooled)):
            total += cosine(pooled[i], pooled[j])
            pairs += 1
    return total / pairs


def embedding_relevance(persona: Persona, story: str, embed: EmbeddingProvider) -> float:
    """Mean cosine between each persona trait and the pooled story embedding."""
    story_vec = pooled_embedding(story, embed)
    trait_texts = [text for _, text in persona.trait_items()]
    trait_vecs = [v.values for v in embed.embed(trait_texts)]
    return sum(cosine(v, story_vec) for v in trait_vecs) / len(trait_vecs)


def _parse_score(reply: str) -> float | None:
    match = _NUMBER.search(reply)
    if not match:
        return None
    value = float(match.group(0))
    return value if 0.0 <= value <= 1.0 else None


def llm_relevance(persona: Persona, story: str, chat: ChatProvider) -> float:
    """Model-rated trait integration on a 0..1 scale, averaged over traits.

    The first decimal number in the reply is the score; out-of-range or
    non-numeric replies get one re-prompt, then the trait is skipped.
    """
    scores = []
    for trait_name, trait_text in persona.trait_items():
        prompt = render("evalprompts/llm_relevance", trait=trait_text, story=story)
        score = None
        for attempt in range(2):
            suffix = (
                ""
                if attempt == 0
                else "\nAnswer with a single number between 0 and 1."
            )
            reply = chat.chat(
                ChatRequest.user(prompt + suffix, key=f"llm_relevance:{trait_name}:{attempt}")
            )
            score = _parse_score(reply.text)
            if score is not None:
                break
        if score is None:
            log.warning("trait %s produced no parseable 0..1 score; skipped", trait_name)
        else:
            scores.append(score)
    if not scores:
        raise AllTraitsUnscorable("no persona trait produced a parseable score")
    return sum(scores) / len(scores)


ScoreFn = Callable[[str, str], float]

"""Continuation-score dataset construction and scoring backends.

Stories are cut into sentence-aligned chunks; consecutive chunk pairs become
positive examples, misordered within-story pairs become negatives, and a
fraction of negatives get the true successor's first sentence grafted on as
hard negatives. Splits are assigned per story, never per pair, to prevent
leakage. The same module houses the scorer used at draft time: a remote HTTP
client speaking the /score protocol and an offline embedding baseline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import requests

from .errors import ConfigError, ScorerUnavailable, TooShort
from .metrics import cosine
from .providers.base import EmbeddingProvider
from .textproc import first_sentence, split_sentences, word_count

log = logging.getLogger(__name__)

DEFAULT_TARGET_WORDS = 200
DEFAULT_SPLIT_COUNTS = (1000, 100, 100)
MIN_TARGET_WORDS = 20


@dataclass(frozen=True)
class StoryDocument:
    id: str
    text: str
    source_path: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise ConfigError(f"story {self.id!r} has empty text")


@dataclass(frozen=True)
class Chunk:
    story_id: str
    index: int
    text: str
    first_sentence: str


class ExampleKind(Enum):
    GOLDEN = "golden"
    NEGATIVE = "negative"
    HARD_NEGATIVE = "hard_negative"


class Split(Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


@dataclass
class CSExample:
    prev: str
    next: str
    label: float
    kind: ExampleKind
    story_id: str
    split: Split | None = None

    def to_json_dict(self) -> dict:
        return {
            "prev": self.prev,
            "next": self.next,
            "label": self.label,
            "kind": self.kind.value,
            "story_id": self.story_id,
            "split": self.split.value if self.split else None,
        }


def chunk_story(doc: StoryDocument, target_words: int = DEFAULT_TARGET_WORDS) -> list[Chunk]:
    """Greedy sentence-aligned packing: whole sentences are appended until the
    running word count reaches target_words, then the chunk is cut. The last
    chunk may be short. Raises TooShort when fewer than 2 chunks result."""
    if target_words < MIN_TARGET_WORDS:
        raise ConfigError(f"target_words must be >= {MIN_TARGET_WORDS}, got {target_words}")
    sentences = split_sentences(doc.text)
    pieces: list[list[str]] = []
    current: list[str] = []
    words = 0
    for sentence in sentences:
        current.append(sentence)
        words += word_count(sentence)
        if words >= target_words:
            pieces.append(current)
            current = []
            words = 0
    if current:
        pieces.append(current)
    if len(pieces) < 2:
        raise TooShort(
            f"story {doc.id!r} yields {len(pieces)} chunk(s); need at least 2"
        )
    return [
        Chunk(
            story_id=doc.id,
            index=i,
            text=" ".join(group),
            first_sentence=group[0],
        )
        for i, group in enumerate(pieces)
    ]


def _strip_first_sentence(text: str) -> str:
    sentences = split_sentences(text)
    return " ".join(sentences[1:]) if len(sentences) > 1 else ""


def build_pairs(
    chunks: list[Chunk],
    negatives_per_golden: int = 1,
    hard_fraction: float = 0.5,
    rng_seed: int = 0,
) -> list[CSExample]:
    """All consecutive pairs become goldens; per golden, decoys are sampled
    from non-successor chunks of the same story. A seeded fraction of decoys
    get the true successor's first sentence spliced in (hard negatives)."""
    if len(chunks) < 2:
        raise ConfigError(f"need at least 2 chunks, got {len(chunks)}")
    if negatives_per_golden < 0:
        raise ConfigError("negatives_per_golden must be >= 0")
    if not 0.0 <= hard_fraction <= 1.0:
        raise ConfigError("hard_fraction must be within [0, 1]")
    rng = random.Random(rng_seed)
    story_id = chunks[0].story_id
    examples: list[CSExample] = []
    for i in range(len(chunks) - 1):
        prev, successor = chunks[i], chunks[i + 1]
        examples.append(
            CSExample(
                prev=prev.text, next=successor.text, label=1.0,
                kind=ExampleKind.GOLDEN, story_id=story_id,
            )
        )
        decoy_pool = [c for j, c in enumerate(chunks) if j not in (i, i + 1)]
        if not decoy_pool:
            log.info("story %s too small for negatives at golden %d", story_id, i)
            continue
        picks = rng.sample(decoy_pool, min(negatives_per_golden, len(decoy_pool)))
        for decoy in picks:
            if rng.random() < hard_fraction:
                rest = _strip_first_sentence(decoy.text)
                next_text = f"{successor.first_sentence} {rest}".strip()
                kind = ExampleKind.HARD_NEGATIVE
            else:
                next_text = decoy.text
                kind = ExampleKind.NEGATIVE
            examples.append(
                CSExample(
                    prev=prev.text, next=next_text, label=0.0,
                    kind=kind, story_id=story_id,
                )
            )
    return examples


def split_corpus(
    story_ids: list[str],
    counts: tuple[int, int, int] = DEFAULT_SPLIT_COUNTS,
    rng_seed: int = 0,
) -> dict[str, Split]:
    """Assign splits per story. With enough stories the exact counts are
    drawn and the remainder left unassigned; smaller corpora fall back to a
    proportional 10:1:1 split with a warning."""
    if len(set(story_ids)) != len(story_ids):
        raise ConfigError("story ids must be unique")
    total_wanted = sum(counts)
    shuffled = list(story_ids)
    random.Random(rng_seed).shuffle(shuffled)
    n = len(shuffled)
    if n >= total_wanted:
        n_train, n_dev, n_test = counts
    else:
        if n < 3:
            raise ConfigError(f"cannot split {n} stories into train/dev/test")
        n_dev = max(1, n // 12)
        n_test = max(1, n // 12)
        n_train = n - n_dev - n_test
        log.warning(
            "corpus has %d stories (< %d); falling back to %d/%d/%d split",
            n, total_wanted, n_train, n_dev, n_test,
        )
    assignment: dict[str, Split] = {}
    for story_id in shuffled[:n_train]:
        assignment[story_id] = Split.TRAIN
    for story_id in shuffled[n_train : n_train + n_dev]:
        assignment[story_id] = Split.DEV
    for story_id in shuffled[n_train + n_dev : n_train + n_dev + n_test]:
        assignment[story_id] = Split.TEST
    return assignment


def _story_seed(base_seed: int, story_id: str) -> int:
    digest = hashlib.sha256(f"{base_seed}\x1f{story_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def load_corpus_dir(path: str | Path) -> tuple[list[StoryDocument], list[str]]:
    """One UTF-8 text file per story, filename stem = story id. Empty or
    undecodable files are skipped and reported."""
    directory = Path(path)
    if not directory.is_dir():
        raise ConfigError(f"corpus directory not found: {directory}")
    stories: list[StoryDocument] = []
    skipped: list[str] = []
    for file in sorted(directory.glob("*.txt")):
        try:
            text = file.read_text(encoding="utf-8")
        except UnicodeDecodeError:
            log.warning("skipping undecodable file %s", file)
            skipped.append(file.stem)
            continue
        if not text.strip():
            log.warning("skipping empty story file %s", file)
            skipped.append(file.stem)
            continue
        stories.append(StoryDocument(id=file.stem, text=text, source_path=str(file)))
    return stories, skipped


def build_dataset(
    stories: list[StoryDocument],
    target_words: int = DEFAULT_TARGET_WORDS,
    negatives_per_golden: int = 1,
    hard_fraction: float = 0.5,
    counts: tuple[int, int, int] = DEFAULT_SPLIT_COUNTS,
    rng_seed: int = 0,
) -> tuple[list[CSExample], dict]:
    """Chunk, split, and pair a whole corpus; returns examples plus stats."""
    chunked: dict[str, list[Chunk]] = {}
    too_short: list[str] = []
    for doc in stories:
        try:
            chunked[doc.id] = chunk_story(doc, target_words)
        except TooShort as exc:
            log.warning("%s", exc)
            too_short.append(doc.id)
    assignment = split_corpus(sorted(chunked), counts=counts, rng_seed=rng_seed)
    examples: list[CSExample] = []
    for story_id in sorted(chunked):
        split = assignment.get(story_id)
        if split is None:
            continue  # beyond the requested split sizes
        story_examples = build_pairs(
            chunked[story_id],
            negatives_per_golden=negatives_per_golden,
            hard_fraction=hard_fraction,
            rng_seed=_story_seed(rng_seed, story_id),
        )
        for example in story_examples:
            example.split = split
        examples.extend(story_examples)
    kind_counts = {kind.value: 0 for kind in ExampleKind}
    split_counts = {split.value: 0 for split in Split}
    for example in examples:
        kind_counts[example.kind.value] += 1
        split_counts[example.split.value] += 1
    stats = {
        "stories_total": len(stories),
        "stories_used": len([s for s in chunked if s in assignment]),
        "stories_too_short": sorted(too_short),
        "stories_unassigned": sorted(set(chunked) - set(assignment)),
        "examples_total": len(examples),
        "per_kind": kind_counts,
        "per_split": split_counts,
        "label_balance": {
            "positive": kind_counts[ExampleKind.GOLDEN.value],
            "negative": kind_counts[ExampleKind.NEGATIVE.value]
            + kind_counts[ExampleKind.HARD_NEGATIVE.value],
        },
        "config": {
            "target_words": target_words,
            "negatives_per_golden": negatives_per_golden,
            "hard_fraction": hard_fraction,
            "counts": list(counts),
            "seed": rng_seed,
        },
    }
    return examples, stats


def write_dataset(examples: list[CSExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for example in examples:
            fh.write(json.dumps(example.to_json_dict(), sort_keys=True) + "\n")


# --- scoring backends --------------------------------------------------------

PREV_TAIL_SENTENCES = 2


def baseline_score(prev: str, cand: str, embed: EmbeddingProvider) -> float:
    """Offline stand-in: rescaled cosine between the tail of the previous
    paragraph (last 2 sentences) and the candidate, mapped into [0, 1]."""
    sentences = split_sentences(prev)
    tail = " ".join(sentences[-PREV_TAIL_SENTENCES:]) if sentences else prev
    vectors = embed.embed([tail, cand])
    return (cosine(vectors[0].values, vectors[1].values) + 1.0) / 2.0


def remote_score(
    prev: str,
    cand: str,
    scorer_endpoint: str,
    timeout: float = 10.0,
    session: requests.Session | None = None,
) -> float:
    """POST {prev, cand} to the scorer's /score; replies outside [0, 1] are
    clamped with a warning. Any transport or protocol failure surfaces as
    ScorerUnavailable so the caller can fall back."""
    url = scorer_endpoint.rstrip("/") + "/score"
    http = session or requests
    try:
        resp = http.post(url, json={"prev": prev, "cand": cand}, timeout=timeout)
    except requests.RequestException as exc:
        raise ScorerUnavailable(f"scorer unreachable at {url}: {exc}") from exc
    if resp.status_code != 200:
        raise ScorerUnavailable(f"scorer returned HTTP {resp.status_code}")
    try:
        score = float(resp.json()["score"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ScorerUnavailable(f"scorer reply malformed: {exc}") from exc
    if not 0.0 <= score <= 1.0:
        clamped = min(1.0, max(0.0, score))
        log.warning("scorer reply %s out of range; clamped to %s", score, clamped)
        return clamped
    return score


class BaselineScorer:
    """Callable scorer over the embedding baseline."""

    name = "baseline"

    def __init__(self, embed: EmbeddingProvider):
        self.embed = embed

    def score(self, prev: str, cand: str) -> float:
        return baseline_score(prev, cand, self.embed)


class RemoteScorer:
    name = "remote"

    def __init__(self, endpoint: str, timeout: float = 10.0):
        if not endpoint:
            raise ConfigError("remote scorer requires an endpoint URL")
        self.endpoint = endpoint
        self.timeout = timeout
        self.session = requests.Session()

    def score(self, prev: str, cand: str) -> float:
        return remote_score(prev, cand, self.endpoint, self.timeout, self.session)


class FallbackScorer:
    """Remote scorer that downgrades permanently to the baseline on failure."""

    def __init__(self, primary: RemoteScorer, fallback: BaselineScorer):
        self.primary = primary
        self.fallback = fallback
        self.downgraded = False

    @property
    def name(self) -> str:
        return self.fallback.name if self.downgraded else self.primary.name

    def score(self, prev: str, cand: str) -> float:
        if not self.downgraded:
            try:
                return self.primary.score(prev, cand)
            except ScorerUnavailable as exc:
                log.warning("remote scorer unavailable, downgrading to baseline: %s", exc)
                self.downgraded = True
        return self.fallback.score(prev, cand)

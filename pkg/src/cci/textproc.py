"""Deterministic tokenization and sentence splitting.

Both the repetition filter and the n-gram metrics import from here so the
two agree bit-for-bit. The rules are intentionally simple and fixture-locked:
changing them silently shifts every downstream score.
"""

from __future__ import annotations

import re
import string

# Trailing abbreviations that do not end a sentence.
_ABBREVIATIONS = frozenset(
    {
        "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc",
        "e.g", "i.e", "cf", "al", "inc", "ltd", "co", "no", "fig", "approx",
        "ver", "vol", "ch", "pp",
    }
)

_SENTENCE_END = re.compile(r'([.!?]+[\'")\]]*)\s+')


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokens with surrounding punctuation stripped.

    Interior punctuation (apostrophes, hyphens) is kept so "don't" and
    "self-doubt" stay single tokens. Tokens that are pure punctuation vanish.
    """
    out = []
    for raw in text.split():
        tok = raw.strip(string.punctuation).lower()
        if tok:
            out.append(tok)
    return out


def ngrams(tokens: list[str], n: int) -> list[tuple[str, ...]]:
    """All contiguous n-grams of `tokens`, empty when len(tokens) < n."""
    if n < 1 or len(tokens) < n:
        return []
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def _is_abbreviation(fragment: str) -> bool:
    tail = fragment.rstrip(".")
    word = tail.rsplit(None, 1)[-1] if tail.split() else tail
    return word.lower().lstrip("(\"'") in _ABBREVIATIONS


def split_sentences(text: str) -> list[str]:
    """Split on terminator runs followed by whitespace and a capital/digit/quote.

    A short abbreviation list suppresses false splits ("Dr. Kim arrived.").
    Whitespace inside sentences is preserved; leading/trailing is trimmed.
    """
    text = text.strip()
    if not text:
        return []
    sentences: list[str] = []
    start = 0
    for match in _SENTENCE_END.finditer(text):
        end = match.end(1)
        nxt = text[match.end() :]
        if not nxt:
            continue
        first = nxt.lstrip()[:1]
        fragment = text[start:end]
        if _is_abbreviation(fragment):
            continue
        if first and (first.isupper() or first.isdigit() or first in "\"'("):
            sentence = text[start:end].strip()
            if sentence:
                sentences.append(sentence)
            start = match.end()
    last = text[start:].strip()
    if last:
        sentences.append(last)
    return sentences


def first_sentence(text: str) -> str:
    """First sentence under `split_sentences`, or the whole text if unsplit."""
    parts = split_sentences(text)
    return parts[0] if parts else text.strip()


def word_count(text: str) -> int:
    return len(text.split())

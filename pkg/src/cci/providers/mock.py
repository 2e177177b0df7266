"""Deterministic offline providers.

Every reply is a pure function of (request key, request text, seed): no
call-order state, so a resumed run replays byte-identically and concurrent
callers cannot perturb each other. The chat mock dispatches on the request
key to produce replies the downstream parsers accept.
"""

from __future__ import annotations

import hashlib
import random
import re

from ..errors import ConfigError, ImageUnreadable
from ..textproc import tokenize
from .base import ChatProvider, EmbeddingProvider, ImageProvider, UsageLedger, VisionProvider
from .types import ChatRequest, ChatResponse, EmbeddingVector, ImageRef, Usage

MOCK_EMBED_DIM = 256
MOCK_EMBED_MODEL = "mock-hashed-bow-256"

_NOUNS = (
    "lantern", "harbor", "violin", "orchard", "ledger", "compass", "attic",
    "sparrow", "anchor", "ribbon", "furnace", "meadow", "archive", "lighthouse",
    "satchel", "chessboard", "greenhouse", "tram", "monsoon", "parcel",
    "courtyard", "telescope", "workshop", "estuary", "almanac", "pendulum",
)
_ADJECTIVES = (
    "quiet", "rusted", "amber", "restless", "hollow", "patient", "crooked",
    "gleaming", "weathered", "stubborn", "pale", "thunderous", "mossy",
    "narrow", "forgotten", "brisk", "copper", "uneven", "sunlit", "grave",
)
_VERBS = (
    "carried", "repaired", "watched", "buried", "traded", "sketched",
    "followed", "counted", "unlocked", "sheltered", "mended", "crossed",
    "measured", "gathered", "signaled", "rehearsed", "guarded", "traced",
)
_PLACES = (
    "by the canal", "under the viaduct", "behind the mill", "near the quay",
    "at the crossing", "along the terrace", "inside the depot",
    "beyond the orchard wall", "beside the old scales",
)
_NAMES = (
    "Mira", "Jonas", "Sable", "Ilka", "Tomas", "Petra", "Anselm", "Noor",
    "Edda", "Viggo", "Lena", "Orin", "Hesper", "Calla", "Rurik", "Imre",
    "Saskia", "Dorian", "Yara", "Felix",
)


def _rng(seed: int, *parts: str) -> random.Random:
    payload = "\x1f".join([str(seed), *parts]).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _sentence(rng: random.Random, subject: str | None = None) -> str:
    subj = subject or f"The {rng.choice(_ADJECTIVES)} {rng.choice(_NOUNS)}"
    return (
        f"{subj} {rng.choice(_VERBS)} the {rng.choice(_ADJECTIVES)} "
        f"{rng.choice(_NOUNS)} {rng.choice(_PLACES)}."
    )


def _paragraph(rng: random.Random, n: int, subject: str | None = None) -> str:
    return " ".join(_sentence(rng, subject) for _ in range(n))


def _mock_usage(prompt: str, reply: str) -> Usage:
    return Usage(
        prompt_tokens=len(prompt.split()), completion_tokens=len(reply.split())
    )


def _extract_name(prompt: str) -> str:
    match = re.search(r"You are ([^.\n]+)\.", prompt)
    if match:
        return match.group(1).strip()
    return "I"


class MockChatProvider(ChatProvider):
    """Template-aware canned chat replies, seeded and stateless."""

    def __init__(self, seed: int, ledger: UsageLedger | None = None):
        self.seed = seed
        self.ledger = ledger

    def chat(self, request: ChatRequest) -> ChatResponse:
        prompt = request.joined_text()
        reply = self._reply(request.key, prompt)
        usage = _mock_usage(prompt, reply)
        if self.ledger is not None:
            self.ledger.record("chat", usage)
        return ChatResponse(text=reply, usage=usage)

    # Dispatch table keyed on the request key's prefix.
    def _reply(self, key: str, prompt: str) -> str:
        rng = _rng(self.seed, "chat", key, prompt)
        head = key.split(":", 1)[0]
        if head == "persona_questionnaire":
            return self._persona_sections(rng)
        if head == "why_step1":
            count = rng.randint(2, 3)
            items = [
                f"{i}. What is the true nature of the {rng.choice(_ADJECTIVES)} "
                f"{rng.choice(_NOUNS)}?"
                for i in range(1, count + 1)
            ]
            return "\n".join(items)
        if head == "why_step2":
            return _paragraph(rng, 2, subject="I")
        if head == "why_step3":
            return "Yes." if rng.random() < 0.5 else "No."
        if head == "plot_spec":
            opening = (
                f"the story of the {rng.choice(_ADJECTIVES)} {rng.choice(_NOUNS)} "
                f"{rng.choice(_PLACES)}."
            )
            return (
                f"1. {_paragraph(rng, 2, subject='I')}\n"
                f"2. {_paragraph(rng, 2, subject='I')}\n"
                f"3. {opening} {_paragraph(rng, 4)}"
            )
        if head == "plan_outline":
            return self._outline(rng)
        if head == "draft_passage":
            name = _extract_name(prompt)
            opening = f"I, {name}, {rng.choice(_VERBS)} the {rng.choice(_NOUNS)} {rng.choice(_PLACES)}."
            return opening + " " + _paragraph(rng, rng.randint(2, 4), subject="I")
        if head == "mw_candidate":
            return self._candidate(rng, prompt)
        if head == "persona_update":
            return "\n".join(
                f"{i}. {_paragraph(rng, 2, subject='I')}" for i in range(1, 7)
            )
        if head == "llm_relevance":
            return f"{rng.randint(0, 10) / 10:.1f}"
        if head == "text_only_character":
            name = rng.choice(_NAMES)
            return f"{name} : {_paragraph(rng, 2, subject='I')}"
        if head in ("text_only_background", "text_only_mainplot"):
            return _paragraph(rng, 3)
        return _paragraph(rng, 2)

    def _persona_sections(self, rng: random.Random) -> str:
        leads = (
            "My dark secret is that I",
            "My family environment is",
            "My appearance is",
            "My way of speaking is",
            "My personality is",
            "The most significant event I lived through is when I",
            "My habitual behaviors are that I",
        )
        lines = []
        for i, lead in enumerate(leads, start=1):
            body = (
                f"{lead} {rng.choice(_VERBS)} the {rng.choice(_ADJECTIVES)} "
                f"{rng.choice(_NOUNS)} {rng.choice(_PLACES)}. "
                + _sentence(rng, subject="I")
            )
            lines.append(f"{i}. {body}")
        return "\n".join(lines)

    def _outline(self, rng: random.Random) -> str:
        lines = []
        tops = rng.randint(2, 3)
        for i in range(1, tops + 1):
            lines.append(f"{i}. {_sentence(rng, subject='I')}")
            for j in range(1, rng.randint(2, 3) + 1):
                lines.append(f"{i}.{j} {_sentence(rng, subject='I')}")
        return "\n".join(lines)

    def _candidate(self, rng: random.Random, prompt: str) -> str:
        # Reuse prompt vocabulary so persona-similarity varies meaningfully.
        pool = [w for w in set(prompt.split()) if w.isalpha() and len(w) > 3]
        pool.sort()
        picked = rng.sample(pool, k=min(4, len(pool))) if pool else ["quiet"]
        return f"I {rng.choice(_VERBS)} the " + " ".join(picked) + "."


class MockImageProvider(ImageProvider):
    def __init__(self, seed: int, ledger: UsageLedger | None = None):
        self.seed = seed
        self.ledger = ledger

    def generate_image(self, prompt: str) -> ImageRef:
        if not prompt.strip():
            raise ConfigError("image prompt must be non-empty")
        digest = hashlib.sha256(
            f"{self.seed}\x1fimage\x1f{prompt}".encode("utf-8")
        ).hexdigest()
        return ImageRef.from_mock(f"mock-{digest[:16]}")


class MockVisionProvider(VisionProvider):
    """Canned descriptions keyed on the image identity and instruction."""

    def __init__(self, seed: int, ledger: UsageLedger | None = None):
        self.seed = seed
        self.ledger = ledger

    def describe_image(self, image: ImageRef, instruction: str, key: str = "") -> ChatResponse:
        ident = self._identity(image)
        rng = _rng(self.seed, "vision", ident, instruction, key)
        if "name" in instruction.lower():
            name = rng.choice(_NAMES)
            reply = f"{name} : {_paragraph(rng, 3, subject='I')}"
        else:
            reply = _paragraph(rng, 4)
        usage = _mock_usage(instruction, reply)
        if self.ledger is not None:
            self.ledger.record("vision", usage)
        return ChatResponse(text=reply, usage=usage)

    def _identity(self, image: ImageRef) -> str:
        if image.mock_id:
            return image.mock_id
        if image.local_path:
            if not image.content_hash:
                # Re-hash so a ref built by hand still resolves or fails loudly.
                return ImageRef.from_local(image.local_path).content_hash
            try:
                with open(image.local_path, "rb"):
                    pass
            except OSError as exc:
                raise ImageUnreadable(
                    f"cannot read image file {image.local_path!r}: {exc}"
                ) from exc
            return image.content_hash
        return image.remote_url or ""


class MockEmbeddingProvider(EmbeddingProvider):
    """Hashed bag-of-words embeddings, dimension 256, always L2-normalized.

    Identity texts embed identically; texts with disjoint (collision-free)
    vocabularies are orthogonal. Deliberately seed-free: vector geometry must
    depend only on the text.
    """

    def __init__(self, ledger: UsageLedger | None = None):
        self.ledger = ledger

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ConfigError("embed requires at least one text")
        out = []
        for text in texts:
            if not text.strip():
                raise ConfigError("cannot embed an empty text")
            out.append(EmbeddingVector(values=self._vector(text), model_id=MOCK_EMBED_MODEL))
        if self.ledger is not None:
            self.ledger.record(
                "embed", Usage(prompt_tokens=sum(len(t.split()) for t in texts))
            )
        return out

    @staticmethod
    def _bucket(token: str) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") % MOCK_EMBED_DIM

    def _vector(self, text: str) -> tuple[float, ...]:
        counts = [0.0] * MOCK_EMBED_DIM
        for token in tokenize(text):
            counts[self._bucket(token)] += 1.0
        norm = sum(c * c for c in counts) ** 0.5
        if norm > 0:
            counts = [c / norm for c in counts]
        return tuple(counts)

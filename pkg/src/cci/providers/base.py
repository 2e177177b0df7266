"""Abstract provider interfaces, one per model capability.

Keeping chat, text-to-image, vision description, and embedding behind
separate interfaces means an alternate image backend is a config swap,
not a code change. Implementations must be safe for concurrent calls.
"""

from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

from .types import ChatRequest, ChatResponse, EmbeddingVector, ImageRef, Usage


class ChatProvider(ABC):
    @abstractmethod
    def chat(self, request: ChatRequest) -> ChatResponse:
        """Send the message list, return raw model text (no post-processing)."""


class ImageProvider(ABC):
    @abstractmethod
    def generate_image(self, prompt: str) -> ImageRef:
        """Render one image for the prompt and return a resolvable reference."""


class VisionProvider(ABC):
    @abstractmethod
    def describe_image(self, image: ImageRef, instruction: str, key: str = "") -> ChatResponse:
        """Describe the image following the instruction text."""


class EmbeddingProvider(ABC):
    @abstractmethod
    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        """One vector per input text, order preserved."""


@dataclass
class UsageLedger:
    """Thread-safe record of per-call token usage.

    The pipeline sums entries into the run manifest; the invariant that the
    manifest total equals the sum of per-call usages is tested against this.
    """

    entries: list[tuple[str, Usage]] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, capability: str, usage: Usage) -> None:
        with self._lock:
            self.entries.append((capability, usage))

    def total(self) -> Usage:
        with self._lock:
            return Usage(
                prompt_tokens=sum(u.prompt_tokens for _, u in self.entries),
                completion_tokens=sum(u.completion_tokens for _, u in self.entries),
            )

    def snapshot(self) -> list[tuple[str, Usage]]:
        with self._lock:
            return list(self.entries)


@dataclass
class ProviderSet:
    """The four capabilities the pipeline consumes, plus shared accounting."""

    chat: ChatProvider
    image: ImageProvider
    vision: VisionProvider
    embedding: EmbeddingProvider
    ledger: UsageLedger = field(default_factory=UsageLedger)

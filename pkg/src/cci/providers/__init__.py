"""Pluggable model providers: one interface per capability, HTTP and mock."""

from __future__ import annotations

from .base import (
    ChatProvider,
    EmbeddingProvider,
    ImageProvider,
    ProviderSet,
    UsageLedger,
    VisionProvider,
)
from .http import (
    HTTPChatProvider,
    HTTPEmbeddingProvider,
    HTTPImageProvider,
    HTTPVisionProvider,
)
from .mock import (
    MOCK_EMBED_DIM,
    MockChatProvider,
    MockEmbeddingProvider,
    MockImageProvider,
    MockVisionProvider,
)
from .types import (
    ChatMessage,
    ChatRequest,
    ChatResponse,
    EmbeddingVector,
    ImageRef,
    ProviderConfig,
    Usage,
)


def mock_provider_set(seed: int) -> ProviderSet:
    """All four capabilities as deterministic mocks sharing one ledger."""
    ledger = UsageLedger()
    return ProviderSet(
        chat=MockChatProvider(seed, ledger),
        image=MockImageProvider(seed, ledger),
        vision=MockVisionProvider(seed, ledger),
        embedding=MockEmbeddingProvider(ledger),
        ledger=ledger,
    )


def http_provider_set(configs: dict[str, ProviderConfig]) -> ProviderSet:
    """HTTP providers from per-capability configs (keys: chat/image/vision/embedding)."""
    ledger = UsageLedger()
    return ProviderSet(
        chat=HTTPChatProvider(configs["chat"], ledger),
        image=HTTPImageProvider(configs["image"], ledger),
        vision=HTTPVisionProvider(configs["vision"], ledger),
        embedding=HTTPEmbeddingProvider(configs["embedding"], ledger),
        ledger=ledger,
    )


__all__ = [
    "ChatMessage",
    "ChatProvider",
    "ChatRequest",
    "ChatResponse",
    "EmbeddingProvider",
    "EmbeddingVector",
    "HTTPChatProvider",
    "HTTPEmbeddingProvider",
    "HTTPImageProvider",
    "HTTPVisionProvider",
    "ImageProvider",
    "ImageRef",
    "MOCK_EMBED_DIM",
    "MockChatProvider",
    "MockEmbeddingProvider",
    "MockImageProvider",
    "MockVisionProvider",
    "ProviderConfig",
    "ProviderSet",
    "Usage",
    "UsageLedger",
    "VisionProvider",
    "http_provider_set",
    "mock_provider_set",
]

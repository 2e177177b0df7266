"""Request/response types shared by every provider capability."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

from ..errors import ConfigError, ImageUnreadable

# Decoding defaults are pinned; callers may override per config.
DEFAULT_TEMPERATURE = 1.0
DEFAULT_TOP_P = 0.99
DEFAULT_FREQUENCY_PENALTY = 1.0
DEFAULT_PRESENCE_PENALTY = 0.0

DEFAULT_API_KEY_ENV = "CCI_API_KEY"


@dataclass(frozen=True)
class ProviderConfig:
    """Connection and decoding settings for one capability endpoint."""

    endpoint_url: str = ""
    api_key_env: str = DEFAULT_API_KEY_ENV
    model_id: str = ""
    timeout: float = 60.0
    max_retries: int = 2
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    frequency_penalty: float = DEFAULT_FREQUENCY_PENALTY
    presence_penalty: float = DEFAULT_PRESENCE_PENALTY
    chat_path: str = "/v1/chat/completions"
    images_path: str = "/v1/images/generations"
    embeddings_path: str = "/v1/embeddings"

    def validate(self) -> None:
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be > 0, got {self.timeout}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")

    def api_key(self) -> str:
        key = os.environ.get(self.api_key_env, "")
        if not key:
            raise ConfigError(
                f"API key env var {self.api_key_env!r} is unset or empty"
            )
        return key

    @classmethod
    def from_dict(cls, data: dict) -> "ProviderConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown provider config fields: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class ChatMessage:
    role: str
    text: str


@dataclass(frozen=True)
class ChatRequest:
    """Ordered message list plus a stable key identifying the prompt family.

    The key is ignored by HTTP providers; deterministic mocks dispatch on it
    and fold it into their hash so distinct call sites get distinct samples.
    """

    messages: tuple[ChatMessage, ...]
    key: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ConfigError("ChatRequest requires at least one message")

    @classmethod
    def user(cls, text: str, key: str = "") -> "ChatRequest":
        return cls(messages=(ChatMessage("user", text),), key=key)

    def joined_text(self) -> str:
        return "\n".join(m.text for m in self.messages)


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    usage: Usage = field(default_factory=Usage)


@dataclass(frozen=True)
class ImageRef:
    """Reference to an image by exactly one of remote URL, local path, mock id.

    content_hash is the sha256 of the image bytes for local files; it stays
    empty for mock ids and for remote URLs that were never fetched.
    """

    remote_url: str | None = None
    local_path: str | None = None
    mock_id: str | None = None
    content_hash: str = ""

    def __post_init__(self):
        populated = sum(
            1 for v in (self.remote_url, self.local_path, self.mock_id) if v
        )
        if populated != 1:
            raise ConfigError(
                f"ImageRef must have exactly one source populated, got {populated}"
            )

    @property
    def source_kind(self) -> str:
        if self.remote_url:
            return "remote-url"
        if self.local_path:
            return "local-path"
        return "mock-id"

    @classmethod
    def from_url(cls, url: str) -> "ImageRef":
        return cls(remote_url=url)

    @classmethod
    def from_local(cls, path: str) -> "ImageRef":
        try:
            with open(path, "rb") as fh:
                digest = hashlib.sha256(fh.read()).hexdigest()
        except OSError as exc:
            raise ImageUnreadable(f"cannot read image file {path!r}: {exc}") from exc
        return cls(local_path=path, content_hash=digest)

    @classmethod
    def from_mock(cls, mock_id: str) -> "ImageRef":
        return cls(mock_id=mock_id)

    def to_dict(self) -> dict:
        return {
            "remote_url": self.remote_url,
            "local_path": self.local_path,
            "mock_id": self.mock_id,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ImageRef":
        return cls(
            remote_url=data.get("remote_url"),
            local_path=data.get("local_path"),
            mock_id=data.get("mock_id"),
            content_hash=data.get("content_hash", ""),
        )


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_id: str

    def __len__(self) -> int:
        return len(self.values)

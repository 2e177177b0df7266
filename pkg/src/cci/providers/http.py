"""OpenAI-compatible REST clients with bounded retry and backoff.

401/403 fail immediately; 429, 5xx, and transport faults retry up to
max_retries with exponential backoff; the attempt count rides on the error.
The sleep function is injectable so tests run without waiting.
"""

from __future__ import annotations

import base64
import time
from typing import Callable

import requests

from ..errors import (
    AuthError,
    ConfigError,
    ContentPolicyRejection,
    ImageUnreadable,
    MalformedResponse,
    RateLimited,
    TransportError,
)
from .base import ChatProvider, EmbeddingProvider, ImageProvider, UsageLedger, VisionProvider
from .types import ChatRequest, ChatResponse, EmbeddingVector, ImageRef, ProviderConfig, Usage

BACKOFF_BASE_SECONDS = 0.5


class _RestClient:
    def __init__(
        self,
        config: ProviderConfig,
        ledger: UsageLedger | None = None,
        session: requests.Session | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        config.validate()
        self.config = config
        self.ledger = ledger
        self.session = session or requests.Session()
        self.sleeper = sleeper

    def _post(self, path: str, payload: dict) -> dict:
        url = self.config.endpoint_url.rstrip("/") + path
        headers = {"Authorization": f"Bearer {self.config.api_key()}"}
        attempts = 0
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            attempts += 1
            try:
                resp = self.session.post(
                    url, json=payload, headers=headers, timeout=self.config.timeout
                )
            except requests.RequestException as exc:
                last_error = TransportError(f"request to {url} failed: {exc}", attempts)
                self._backoff(attempt)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"{url} rejected credentials (HTTP {resp.status_code})")
            if resp.status_code == 429:
                last_error = RateLimited(f"{url} rate limited (HTTP 429)", attempts)
                self._backoff(attempt)
                continue
            if resp.status_code >= 500:
                last_error = TransportError(
                    f"{url} returned HTTP {resp.status_code}", attempts
                )
                self._backoff(attempt)
                continue
            if resp.status_code >= 400:
                self._raise_client_error(resp)
            try:
                return resp.json()
            except ValueError as exc:
                raise MalformedResponse(f"{url} returned non-JSON body: {exc}") from exc
        assert last_error is not None
        last_error.attempts = attempts  # type: ignore[attr-defined]
        raise last_error

    def _raise_client_error(self, resp: requests.Response) -> None:
        try:
            detail = resp.json().get("error", {})
        except ValueError:
            detail = {}
        code = detail.get("code", "") if isinstance(detail, dict) else ""
        if code == "content_policy_violation":
            raise ContentPolicyRejection(
                f"prompt rejected by content policy: {detail.get('message', '')}"
            )
        raise MalformedResponse(
            f"HTTP {resp.status_code}: {detail.get('message', resp.text[:200])}"
        )

    def _backoff(self, attempt: int) -> None:
        if attempt < self.config.max_retries:
            self.sleeper(BACKOFF_BASE_SECONDS * (2**attempt))

    def _record(self, capability: str, payload: dict) -> Usage:
        raw = payload.get("usage") or {}
        usage = Usage(
            prompt_tokens=int(raw.get("prompt_tokens", 0)),
            completion_tokens=int(raw.get("completion_tokens", 0)),
        )
        if self.ledger is not None:
            self.ledger.record(capability, usage)
        return usage


def _extract_chat_text(payload: dict) -> tuple[str, str]:
    try:
        choice = payload["choices"][0]
        return choice["message"]["content"], choice.get("finish_reason", "stop")
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"unexpected chat payload shape: {exc}") from exc


class HTTPChatProvider(_RestClient, ChatProvider):
    def chat(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": self.config.model_id,
            "messages": [{"role": m.role, "content": m.text} for m in request.messages],
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "frequency_penalty": self.config.frequency_penalty,
            "presence_penalty": self.config.presence_penalty,
        }
        body = self._post(self.config.chat_path, payload)
        text, finish = _extract_chat_text(body)
        return ChatResponse(text=text, finish_reason=finish, usage=self._record("chat", body))


class HTTPVisionProvider(_RestClient, VisionProvider):
    def describe_image(self, image: ImageRef, instruction: str, key: str = "") -> ChatResponse:
        payload = {
            "model": self.config.model_id,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": instruction},
                        {"type": "image_url", "image_url": {"url": self._image_url(image)}},
                    ],
                }
            ],
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
        }
        body = self._post(self.config.chat_path, payload)
        text, finish = _extract_chat_text(body)
        return ChatResponse(text=text, finish_reason=finish, usage=self._record("vision", body))

    @staticmethod
    def _image_url(image: ImageRef) -> str:
        if image.remote_url:
            return image.remote_url
        if image.local_path:
            try:
                with open(image.local_path, "rb") as fh:
                    data = base64.b64encode(fh.read()).decode("ascii")
            except OSError as exc:
                raise ImageUnreadable(
                    f"cannot read image file {image.local_path!r}: {exc}"
                ) from exc
            return f"data:image/png;base64,{data}"
        raise ImageUnreadable(f"mock image {image.mock_id!r} has no remote resolution")


class HTTPImageProvider(_RestClient, ImageProvider):
    def generate_image(self, prompt: str) -> ImageRef:
        if not prompt.strip():
            raise ConfigError("image prompt must be non-empty")
        payload = {"model": self.config.model_id, "prompt": prompt, "n": 1}
        body = self._post(self.config.images_path, payload)
        self._record("image", body)
        try:
            url = body["data"][0]["url"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected image payload shape: {exc}") from exc
        return ImageRef.from_url(url)


class HTTPEmbeddingProvider(_RestClient, EmbeddingProvider):
    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts or any(not t.strip() for t in texts):
            raise ConfigError("embed requires non-empty texts")
        payload = {"model": self.config.model_id, "input": list(texts)}
        body = self._post(self.config.embeddings_path, payload)
        self._record("embed", body)
        try:
            rows = sorted(body["data"], key=lambda r: r.get("index", 0))
            vectors = [
                EmbeddingVector(values=tuple(float(x) for x in row["embedding"]),
                                model_id=self.config.model_id)
                for row in rows
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"unexpected embedding payload shape: {exc}") from exc
        if len(vectors) != len(texts):
            raise MalformedResponse(
                f"expected {len(texts)} vectors, got {len(vectors)}"
            )
        return vectors

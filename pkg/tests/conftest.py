from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from cci.providers import ProviderSet, UsageLedger, mock_provider_set
from cci.providers.base import ChatProvider
from cci.providers.types import ChatRequest, ChatResponse, Usage


class ScriptedChat(ChatProvider):
    """Replays queued replies in order; an Exception entry is raised instead."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests: list[ChatRequest] = []

    def chat(self, request: ChatRequest) -> ChatResponse:
        self.requests.append(request)
        if not self.replies:
            raise AssertionError("scripted chat ran out of replies")
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return ChatResponse(
            text=reply,
            usage=Usage(
                prompt_tokens=len(request.joined_text().split()),
                completion_tokens=len(reply.split()),
            ),
        )


class FnChat(ChatProvider):
    """Chat stub computing the reply from the request."""

    def __init__(self, fn):
        self.fn = fn
        self.requests: list[ChatRequest] = []

    def chat(self, request: ChatRequest) -> ChatResponse:
        self.requests.append(request)
        return ChatResponse(text=self.fn(request))


class StubServer:
    """Tiny local HTTP server with a scriptable response queue."""

    def __init__(self):
        self.queue: list[tuple[int, object]] = []
        self.default: tuple[int, object] = (200, {})
        self.requests: list[tuple[str, dict | None]] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (stdlib naming)
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length) if length else b""
                try:
                    payload = json.loads(raw) if raw else None
                except ValueError:
                    payload = None
                outer.requests.append((self.path, payload))
                status, body = outer.queue.pop(0) if outer.queue else outer.default
                data = (
                    body.encode("utf-8")
                    if isinstance(body, str)
                    else json.dumps(body).encode("utf-8")
                )
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            do_GET = do_POST

            def log_message(self, *args):
                pass

        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.port = self.httpd.server_address[1]
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def enqueue(self, status: int, body) -> None:
        self.queue.append((status, body))

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    server = StubServer()
    yield server
    server.close()


@pytest.fixture
def mock_providers() -> ProviderSet:
    return mock_provider_set(seed=7)


@pytest.fixture
def usage_ledger() -> UsageLedger:
    return UsageLedger()


@pytest.fixture(autouse=True)
def _api_key(monkeypatch):
    monkeypatch.setenv("CCI_API_KEY", "test-key")

"""Exception taxonomy shared across the pipeline.

Transport-level failures, parse failures, and structural violations map to
distinct types so the CLI can translate them into stable exit codes
(config -> 2, provider -> 3, parse/shape -> 4).
"""

from __future__ import annotations


class CCIError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CCIError):
    """Invalid or incomplete configuration."""


# --- provider / transport errors -------------------------------------------


class ProviderError(CCIError):
    """Base class for failures talking to a model provider."""


class AuthError(ProviderError):
    """Credentials rejected by the endpoint (401/403). Not retried."""


class RateLimited(ProviderError):
    """429 persisted after all retries."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class TransportError(ProviderError):
    """Connection failure, timeout, or 5xx persisted after all retries."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class MalformedResponse(ProviderError):
    """Endpoint replied but the payload could not be interpreted."""


class ContentPolicyRejection(ProviderError):
    """Image prompt refused by the backend's safety layer. Re-samplable."""


class ImageUnreadable(ProviderError):
    """Image reference cannot be resolved to bytes."""

    def __init__(self, message: str, slot: str | None = None):
        super().__init__(message)
        self.slot = slot


class ScorerUnavailable(ProviderError):
    """Remote continuation scorer unreachable; callers fall back."""


# --- parse / shape errors ---------------------------------------------------


class ParseError(CCIError):
    """Model reply did not contain the required structure."""

    def __init__(self, message: str, missing_traits: list[str] | None = None):
        super().__init__(message)
        self.missing_traits = missing_traits or []


class NameParseError(ParseError):
    """Character description lacked the 'Name : description' delimiter."""


class YesNoParseError(ParseError):
    """A yes/no check reply contained neither token."""


class OutlineShapeError(CCIError):
    """Outline tree violates the configured structural bounds."""

    def __init__(self, message: str, node_id: str | None = None):
        super().__init__(message)
        self.node_id = node_id


class TooShort(CCIError):
    """Story yields fewer than two chunks, so no pairs can be built."""


class AllTraitsUnscorable(CCIError):
    """No persona trait produced a parseable relevance score."""


class DraftError(CCIError):
    """Fatal failure mid-draft; carries the partial bundle for resumption."""

    def __init__(self, message: str, partial_bundle=None, cause: Exception | None = None):
        super().__init__(message)
        self.partial_bundle = partial_bundle
        self.cause = cause

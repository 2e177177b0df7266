"""Versioned prompt template assets and the tiny renderer they share.

Templates live under ``assets/<version>/`` as plain text with ``{name}``-style
placeholders. Rendering is literal substitution: unknown placeholders are left
intact so a missing value shows up in the output instead of crashing a run.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

from ..errors import ConfigError

PROMPT_VERSION = "v1"

_ELEMENT_KINDS = ("character", "background", "mainplot")
_PROMPT_TYPES = ("movie", "story", "manga")


def render_template(template: str, **values: str) -> str:
    out = template
    for key, value in values.items():
        out = out.replace(f"{{{key}}}", str(value))
    return out


@lru_cache(maxsize=None)
def load(template: str, /, version: str = PROMPT_VERSION) -> str:
    """Load a template by path-like name, e.g. ``vision/character``."""
    root = resources.files(__package__) / "assets" / version
    target = root / f"{template}.txt"
    try:
        text = target.read_text(encoding="utf-8")
    except (FileNotFoundError, NotADirectoryError):
        raise ConfigError(f"no prompt template {template!r} in version {version!r}")
    return text.rstrip("\n")


def render(template: str, /, version: str = PROMPT_VERSION, **values: str) -> str:
    return render_template(load(template, version=version), **values)


def image_prompt(kind: str, prompt_type: str, version: str = PROMPT_VERSION) -> str:
    if kind not in _ELEMENT_KINDS or prompt_type not in _PROMPT_TYPES:
        raise ConfigError(f"no image prompt for kind={kind!r} type={prompt_type!r}")
    return load(f"image/{kind}_{prompt_type}", version)


def vision_instruction(kind: str, version: str = PROMPT_VERSION) -> str:
    if kind not in _ELEMENT_KINDS:
        raise ConfigError(f"no vision instruction for kind={kind!r}")
    return load(f"vision/{kind}", version)


def text_only_prompt(kind: str, version: str = PROMPT_VERSION) -> str:
    if kind not in _ELEMENT_KINDS:
        raise ConfigError(f"no text-only prompt for kind={kind!r}")
    return load(f"textonly/{kind}", version)


def writer_instruction(writer: str, version: str = PROMPT_VERSION) -> str:
    return load(f"mw/writer_{writer}", version)

"""Story-element creation.

Three routes produce the same three elements (character, background, main
plot): image-guided (text-to-image then vision description), text-only
(direct chat prompts), and user-supplied images (vision description only).
Character replies arrive as "Name : description" and are parsed here.
"""

from __future__ import annotations

import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

from . import prompts
from .errors import ConfigError, ContentPolicyRejection, ImageUnreadable, MalformedResponse, NameParseError
from .providers.base import ChatProvider, ProviderSet
from .providers.types import ChatRequest, ImageRef

log = logging.getLogger(__name__)

_NAME_SEP = re.compile(r"\s*:\s*")


class ElementKind(Enum):
    CHARACTER = "character"
    BACKGROUND = "background"
    MAIN_PLOT = "mainplot"


class PromptType(Enum):
    MOVIE = "movie"
    STORY = "story"
    MANGA = "manga"


class Provenance(Enum):
    GENERATED = "generated"
    USER_IMAGE = "user_image"
    TEXT_ONLY = "text_only"


class ElementMode(Enum):
    IG = "ig"
    TEXT_ONLY = "text-only"
    USER_IMAGES = "user-images"


# Characters draw from manga imagery, backgrounds and main plots from movie
# imagery; per-element overrides exist for prompt-type sweeps.
DEFAULT_PROMPT_TYPES: dict[ElementKind, PromptType] = {
    ElementKind.CHARACTER: PromptType.MANGA,
    ElementKind.BACKGROUND: PromptType.MOVIE,
    ElementKind.MAIN_PLOT: PromptType.MOVIE,
}

CONTENT_POLICY_RESAMPLES = 2
NAME_REPROMPTS = 2


def parse_name_description(text: str) -> tuple[str, str]:
    """Split "Name : description" on the first colon; both parts non-empty."""
    match = _NAME_SEP.search(text)
    if not match:
        raise NameParseError(f"no 'Name :' delimiter in reply: {text[:80]!r}")
    name = text[: match.start()].strip()
    description = text[match.end() :].strip()
    if not name or not description:
        raise NameParseError(f"empty name or description in reply: {text[:80]!r}")
    return name, description


def format_name_description(name: str, description: str) -> str:
    return f"{name} : {description}"


@dataclass(frozen=True)
class StoryElement:
    kind: ElementKind
    description: str
    provenance: Provenance
    image: ImageRef | None = None
    character_name: str = ""

    def __post_init__(self):
        if not self.description.strip():
            raise ConfigError(f"{self.kind.value} element has empty description")
        if self.kind is ElementKind.CHARACTER and not self.character_name.strip():
            raise ConfigError("character element requires a parsed name")
        if (self.image is None) != (self.provenance is Provenance.TEXT_ONLY):
            raise ConfigError("image must be absent exactly when provenance is text-only")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "description": self.description,
            "provenance": self.provenance.value,
            "image": self.image.to_dict() if self.image else None,
            "character_name": self.character_name,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StoryElement":
        return cls(
            kind=ElementKind(data["kind"]),
            description=data["description"],
            provenance=Provenance(data["provenance"]),
            image=ImageRef.from_dict(data["image"]) if data.get("image") else None,
            character_name=data.get("character_name", ""),
        )


@dataclass(frozen=True)
class StoryElements:
    character: StoryElement
    background: StoryElement
    main_plot: StoryElement

    def __post_init__(self):
        slots = (
            (self.character, ElementKind.CHARACTER),
            (self.background, ElementKind.BACKGROUND),
            (self.main_plot, ElementKind.MAIN_PLOT),
        )
        for element, kind in slots:
            if element.kind is not kind:
                raise ConfigError(f"element in {kind.value} slot has kind {element.kind.value}")
        provenances = {e.provenance for e, _ in slots}
        if len(provenances) != 1:
            raise ConfigError(f"mixed provenances in one element set: {provenances}")

    @property
    def provenance(self) -> Provenance:
        return self.character.provenance

    def to_dict(self) -> dict:
        return {
            "character": self.character.to_dict(),
            "background": self.background.to_dict(),
            "main_plot": self.main_plot.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StoryElements":
        return cls(
            character=StoryElement.from_dict(data["character"]),
            background=StoryElement.from_dict(data["background"]),
            main_plot=StoryElement.from_dict(data["main_plot"]),
        )


def _describe(
    providers: ProviderSet,
    image: ImageRef,
    kind: ElementKind,
    provenance: Provenance,
) -> StoryElement:
    """Vision-describe one image; characters get name parsing with re-prompts."""
    instruction = prompts.vision_instruction(kind.value)
    last_error: Exception = MalformedResponse("vision returned no usable text")
    for attempt in range(NAME_REPROMPTS + 1):
        reply = providers.vision.describe_image(
            image, instruction, key=f"vision:{kind.value}:{attempt}"
        )
        text = reply.text.strip()
        if not text:
            last_error = MalformedResponse(f"empty vision reply for {kind.value}")
            continue
        if kind is ElementKind.CHARACTER:
            try:
                name, description = parse_name_description(text)
            except NameParseError as exc:
                last_error = exc
                continue
            return StoryElement(
                kind=kind, description=description, provenance=provenance,
                image=image, character_name=name,
            )
        return StoryElement(kind=kind, description=text, provenance=provenance, image=image)
    raise last_error


def imagine_element(
    kind: ElementKind,
    prompt_type: PromptType,
    providers: ProviderSet,
) -> StoryElement:
    """Image-guided route: fixed short prompt -> image -> vision description."""
    prompt = prompts.image_prompt(kind.value, prompt_type.value)
    last_error: Exception | None = None
    image: ImageRef | None = None
    for _ in range(CONTENT_POLICY_RESAMPLES + 1):
        try:
            image = providers.image.generate_image(prompt)
            break
        except ContentPolicyRejection as exc:
            last_error = exc
            log.warning("image prompt rejected by content policy, re-sampling")
    if image is None:
        assert last_error is not None
        raise last_error
    return _describe(providers, image, kind, Provenance.GENERATED)


def imagine_element_text_only(kind: ElementKind, chat: ChatProvider) -> StoryElement:
    """Text-only route; same parsing rules, no image."""
    prompt = prompts.text_only_prompt(kind.value)
    last_error: Exception = MalformedResponse("chat returned no usable text")
    for attempt in range(NAME_REPROMPTS + 1):
        reply = chat.chat(
            ChatRequest.user(prompt, key=f"text_only_{kind.value}:{attempt}")
        )
        text = reply.text.strip()
        if not text:
            last_error = MalformedResponse(f"empty text-only reply for {kind.value}")
            continue
        if kind is ElementKind.CHARACTER:
            try:
                name, description = parse_name_description(text)
            except NameParseError as exc:
                last_error = exc
                continue
            return StoryElement(
                kind=kind, description=description,
                provenance=Provenance.TEXT_ONLY, character_name=name,
            )
        return StoryElement(kind=kind, description=text, provenance=Provenance.TEXT_ONLY)
    raise last_error


def describe_user_images(
    character_img: ImageRef,
    background_img: ImageRef,
    mainplot_img: ImageRef,
    providers: ProviderSet,
) -> StoryElements:
    """Run only the vision-description step over user-provided images."""
    slots = (
        (ElementKind.CHARACTER, character_img),
        (ElementKind.BACKGROUND, background_img),
        (ElementKind.MAIN_PLOT, mainplot_img),
    )
    described: dict[ElementKind, StoryElement] = {}
    for kind, image in slots:
        if image.local_path and not os.path.isfile(image.local_path):
            raise ImageUnreadable(
                f"image for {kind.value} not found: {image.local_path}", slot=kind.value
            )
        try:
            described[kind] = _describe(providers, image, kind, Provenance.USER_IMAGE)
        except ImageUnreadable as exc:
            raise ImageUnreadable(str(exc), slot=kind.value) from exc
    return StoryElements(
        character=described[ElementKind.CHARACTER],
        background=described[ElementKind.BACKGROUND],
        main_plot=described[ElementKind.MAIN_PLOT],
    )


def imagine_all(
    mode: ElementMode,
    providers: ProviderSet,
    user_image_paths: dict[str, str] | None = None,
    prompt_types: dict[ElementKind, PromptType] | None = None,
    max_workers: int = 3,
) -> StoryElements:
    """Dispatch per element mode; image-guided elements run concurrently."""
    if mode is ElementMode.TEXT_ONLY:
        return StoryElements(
            character=imagine_element_text_only(ElementKind.CHARACTER, providers.chat),
            background=imagine_element_text_only(ElementKind.BACKGROUND, providers.chat),
            main_plot=imagine_element_text_only(ElementKind.MAIN_PLOT, providers.chat),
        )
    if mode is ElementMode.USER_IMAGES:
        paths = user_image_paths or {}
        missing = [k for k in ("character", "background", "mainplot") if not paths.get(k)]
        if missing:
            raise ConfigError(f"user-images mode requires paths for: {missing}")
        for slot in ("character", "background", "mainplot"):
            if not os.path.isfile(paths[slot]):
                raise ImageUnreadable(
                    f"image for {slot} not found: {paths[slot]}", slot=slot
                )
        return describe_user_images(
            ImageRef.from_local(paths["character"]),
            ImageRef.from_local(paths["background"]),
            ImageRef.from_local(paths["mainplot"]),
            providers,
        )
    types = dict(DEFAULT_PROMPT_TYPES)
    if prompt_types:
        types.update(prompt_types)
    kinds = (ElementKind.CHARACTER, ElementKind.BACKGROUND, ElementKind.MAIN_PLOT)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(imagine_element, k, types[k], providers) for k in kinds]
        results = [f.result() for f in futures]
    return StoryElements(character=results[0], background=results[1], main_plot=results[2])

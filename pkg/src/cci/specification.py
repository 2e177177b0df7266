"""Persona and main-plot specification.

Expands the imagined character into a 7-trait persona, then clarifies the
main plot by iteratively surfacing ambiguous points, imagining evidences for
them, and re-checking until the model says nothing ambiguous remains (or the
round budget runs out). The clarified plot is condensed by three final
questions into the premise used for planning.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace

from . import prompts
from .errors import ConfigError, MalformedResponse, ParseError, YesNoParseError
from .imagination import StoryElement
from .providers.base import ChatProvider
from .providers.types import ChatRequest
from .textproc import split_sentences

log = logging.getLogger(__name__)

TRAIT_ORDER = (
    "dark_secret",
    "family_environment",
    "appearance",
    "speech_tone",
    "personality",
    "significant_events",
    "habits",
)

# Fallback keywords for replies that drop the numbering.
_TRAIT_KEYWORDS = {
    "dark_secret": ("dark secret",),
    "family_environment": ("family environment", "family"),
    "appearance": ("appearance",),
    "speech_tone": ("way of speaking", "tone of speech", "speech"),
    "personality": ("personality",),
    "significant_events": ("significant events", "trauma"),
    "habits": ("habitual behaviors", "habits"),
}

_SECTION_START = re.compile(r"^\s*(?:\*\*|\#+\s*)?(\d+)\s*[.):]\s*(.*)$")

PARSE_REPROMPTS = 2


@dataclass(frozen=True)
class Persona:
    """7-trait protagonist profile; version 0 at creation, +1 per update."""

    name: str
    dark_secret: str
    family_environment: str
    appearance: str
    speech_tone: str
    personality: str
    significant_events: str
    habits: str
    version: int = 0

    def __post_init__(self):
        for trait in TRAIT_ORDER:
            if not getattr(self, trait).strip():
                raise ConfigError(f"persona trait {trait!r} is empty")
        if self.version < 0:
            raise ConfigError("persona version must be >= 0")

    def trait_items(self) -> list[tuple[str, str]]:
        return [(trait, getattr(self, trait)) for trait in TRAIT_ORDER]

    def full_text(self) -> str:
        """All 7 traits concatenated in fixed order (similarity reference)."""
        return " ".join(text for _, text in self.trait_items())

    def render_numbered(self) -> str:
        """The canonical 7-numbered layout used inside prompts."""
        return "\n".join(
            f"{i}. {text}" for i, (_, text) in enumerate(self.trait_items(), start=1)
        )

    def to_dict(self) -> dict:
        out = {trait: getattr(self, trait) for trait in TRAIT_ORDER}
        out["name"] = self.name
        out["version"] = self.version
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Persona":
        return cls(
            name=data["name"],
            version=data.get("version", 0),
            **{trait: data[trait] for trait in TRAIT_ORDER},
        )


@dataclass(frozen=True)
class WhyChainParams:
    n: int = 3  # max ambiguous points per round
    m: int = 3  # max rounds

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ConfigError(f"why-chain params must be >= 1, got N={self.n} M={self.m}")


@dataclass(frozen=True)
class WhyRound:
    ambiguities: tuple[str, ...]
    evidences: str
    continue_flag: bool

    def to_dict(self) -> dict:
        return {
            "ambiguities": list(self.ambiguities),
            "evidences": self.evidences,
            "continue_flag": self.continue_flag,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WhyRound":
        return cls(
            ambiguities=tuple(data["ambiguities"]),
            evidences=data["evidences"],
            continue_flag=data["continue_flag"],
        )


@dataclass(frozen=True)
class MainPlotSpec:
    original: str
    qa_chain: tuple[WhyRound, ...]
    why_inevitable: str
    protagonist_response: str
    summary_5_sentences: str

    def __post_init__(self):
        if not self.summary_5_sentences.strip():
            raise ConfigError("plot summary is empty")

    def clarified_text(self) -> str:
        parts = [self.original] + [r.evidences for r in self.qa_chain]
        return " ".join(p for p in parts if p)

    def to_dict(self) -> dict:
        return {
            "original": self.original,
            "qa_chain": [r.to_dict() for r in self.qa_chain],
            "why_inevitable": self.why_inevitable,
            "protagonist_response": self.protagonist_response,
            "summary_5_sentences": self.summary_5_sentences,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MainPlotSpec":
        return cls(
            original=data["original"],
            qa_chain=tuple(WhyRound.from_dict(r) for r in data["qa_chain"]),
            why_inevitable=data["why_inevitable"],
            protagonist_response=data["protagonist_response"],
            summary_5_sentences=data["summary_5_sentences"],
        )


def parse_numbered_sections(text: str, expected: int) -> dict[int, str]:
    """Collect 'N. ...' sections for N in 1..expected; content may span lines."""
    sections: dict[int, list[str]] = {}
    current: int | None = None
    for line in text.splitlines():
        match = _SECTION_START.match(line)
        if match and 1 <= int(match.group(1)) <= expected:
            current = int(match.group(1))
            sections.setdefault(current, [])
            rest = match.group(2).strip().strip("*")
            if rest:
                sections[current].append(rest)
        elif current is not None and line.strip():
            sections[current].append(line.strip())
    return {k: " ".join(v).strip() for k, v in sections.items() if v}


def _keyword_fallback(text: str, trait: str) -> str:
    """Pull the paragraph mentioning a trait keyword when numbering is absent."""
    lowered = text.lower()
    for keyword in _TRAIT_KEYWORDS[trait]:
        pos = lowered.find(keyword)
        if pos == -1:
            continue
        tail = text[pos:]
        cut = tail.find("\n\n")
        block = tail[:cut] if cut != -1 else tail
        block = block.strip()
        if block:
            return block
    return ""


def parse_persona_reply(text: str, name: str, version: int = 0) -> Persona:
    """Map a 7-section questionnaire reply onto Persona fields."""
    sections = parse_numbered_sections(text, expected=7)
    traits: dict[str, str] = {}
    missing: list[str] = []
    for i, trait in enumerate(TRAIT_ORDER, start=1):
        value = sections.get(i, "") or _keyword_fallback(text, trait)
        if value:
            traits[trait] = value
        else:
            missing.append(trait)
    if missing:
        raise ParseError(
            f"persona reply missing traits: {missing}", missing_traits=missing
        )
    return Persona(name=name, version=version, **traits)


_FORMAT_REMINDER = (
    "\nAnswer all 7 questions, each on its own line, numbered 1. through 7."
)


def specify_persona(
    character: StoryElement, background: StoryElement, chat: ChatProvider
) -> Persona:
    """Fill the questionnaire from the imagined character and background."""
    if not character.character_name.strip():
        raise ConfigError("character element has no parsed name")
    prompt = prompts.render(
        "specification/persona_questionnaire",
        name=character.character_name,
        description=character.description,
        background=background.description,
    )
    last_error: ParseError | None = None
    for attempt in range(PARSE_REPROMPTS + 1):
        suffix = _FORMAT_REMINDER if attempt else ""
        reply = chat.chat(
            ChatRequest.user(prompt + suffix, key=f"persona_questionnaire:{attempt}")
        )
        try:
            return parse_persona_reply(reply.text, name=character.character_name)
        except ParseError as exc:
            last_error = exc
            log.warning("persona parse failed (attempt %d): %s", attempt + 1, exc)
    assert last_error is not None
    raise last_error


def _parse_yes_no(reply: str) -> bool | None:
    """First alphabetic token decides; None when it is neither yes nor no."""
    match = re.search(r"[A-Za-z]+", reply)
    if not match:
        return None
    token = match.group(0).lower()
    if token == "yes":
        return True
    if token == "no":
        return False
    return None


def _parse_list_items(reply: str, max_items: int) -> tuple[str, ...]:
    """Numbered or dashed list items; falls back to non-empty lines."""
    items: list[str] = []
    for line in reply.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        match = re.match(r"^(?:\d+\s*[.):]|[-*])\s*(.*)$", stripped)
        items.append(match.group(1).strip() if match else stripped)
    return tuple(i for i in items if i)[:max_items]


def chain_of_ask_why(
    main_plot: str,
    persona: Persona,
    params: WhyChainParams,
    chat: ChatProvider,
) -> tuple[str, tuple[WhyRound, ...]]:
    """Iteratively surface ambiguities, imagine evidences, append, re-check.

    Returns the clarified text (original plus every round's evidences, in
    order) and the per-round record. Stops on a "No" check or after M rounds.
    """
    if not main_plot.strip():
        raise ConfigError("main plot text is empty")
    working = main_plot.strip()
    rounds: list[WhyRound] = []
    traits = persona.render_numbered()
    for round_no in range(params.m):
        step1 = chat.chat(
            ChatRequest.user(
                prompts.render("specification/why_step1", text=working, n=str(params.n)),
                key=f"why_step1:{round_no}",
            )
        )
        ambiguities = _parse_list_items(step1.text, params.n)
        step2 = chat.chat(
            ChatRequest.user(
                prompts.render(
                    "specification/why_step2",
                    name=persona.name,
                    main_plot=working,
                    personal_traits=traits,
                    missing_backgrounds=" ".join(ambiguities),
                ),
                key=f"why_step2:{round_no}",
            )
        )
        evidences = step2.text.strip()
        if not evidences:
            raise MalformedResponse("evidence step returned empty text")
        working = f"{working} {evidences}"
        decision: bool | None = None
        for attempt in range(2):
            suffix = "" if attempt == 0 else "\nAnswer only Yes or No."
            step3 = chat.chat(
                ChatRequest.user(
                    prompts.render("specification/why_step3", text=working) + suffix,
                    key=f"why_step3:{round_no}:{attempt}",
                )
            )
            decision = _parse_yes_no(step3.text)
            if decision is not None:
                break
        if decision is None:
            raise YesNoParseError(f"ambiguity check reply was not yes/no: {step3.text[:80]!r}")
        rounds.append(
            WhyRound(ambiguities=ambiguities, evidences=evidences, continue_flag=decision)
        )
        if not decision:
            break
    return working, tuple(rounds)


def specify_main_plot(
    clarified: str,
    persona: Persona,
    chat: ChatProvider,
    original: str | None = None,
    qa_chain: tuple[WhyRound, ...] = (),
) -> MainPlotSpec:
    """Ask the three closing questions over the clarified plot."""
    if not clarified.strip():
        raise ConfigError("clarified plot text is empty")
    prompt = prompts.render(
        "specification/plot_spec",
        name=persona.name,
        main_plot=clarified,
        personal_traits=persona.render_numbered(),
    )
    sections: dict[int, str] = {}
    for attempt in range(2):
        suffix = "" if attempt == 0 else "\nAnswer all 3 questions, numbered 1. to 3."
        reply = chat.chat(ChatRequest.user(prompt + suffix, key=f"plot_spec:{attempt}"))
        sections = parse_numbered_sections(reply.text, expected=3)
        if all(i in sections for i in (1, 2, 3)):
            break
    missing = [i for i in (1, 2, 3) if i not in sections]
    if missing:
        raise ParseError(f"plot specification reply missing sections {missing}")
    summary = sections[3]
    n_sentences = len(split_sentences(summary))
    if n_sentences != 5:
        log.warning("plot summary has %d sentences instead of 5; accepted", n_sentences)
    return MainPlotSpec(
        original=original if original is not None else clarified,
        qa_chain=qa_chain,
        why_inevitable=sections[1],
        protagonist_response=sections[2],
        summary_5_sentences=summary,
    )


def bump_version(persona: Persona, **updates: str) -> Persona:
    """New persona with replaced traits and version incremented."""
    return replace(persona, version=persona.version + 1, **updates)

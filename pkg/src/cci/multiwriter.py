"""Leaf-by-leaf drafting with multi-writer persona injection.

Each drafted passage triggers an injection point: five persona writers each
propose K candidates; one candidate per writer survives on embedding
similarity to the persona; survivors too similar to recent output are
discarded on a self-BLEU score; the rest are reranked by continuation score
and the winner (if it clears the threshold) is appended to the passage.
After each completed outline node the persona is re-imagined.
"""

from __future__ import annotations

import hashlib
import logging
import random
from dataclasses import dataclass, field
from enum import Enum

from . import prompts
from .cs_dataset import BaselineScorer, FallbackScorer, RemoteScorer
from .errors import ConfigError, DraftError, MalformedResponse, ProviderError
from .imagination import StoryElements, format_name_description
from .metrics import bleu_n, cosine
from .planner import OutlineNode, OutlineTree
from .providers.base import ChatProvider, EmbeddingProvider, ProviderSet
from .providers.types import ChatRequest
from .specification import MainPlotSpec, Persona, bump_version, parse_numbered_sections
from .textproc import split_sentences

log = logging.getLogger(__name__)

Scorer = BaselineScorer | RemoteScorer | FallbackScorer

STORY_CONTEXT_CHARS = 12000
DRAFT_REPROMPTS = 1
UPDATE_REPROMPTS = 2


class WriterKind(Enum):
    """The five persona writers; definition order is the tie-break order."""

    RELATIONSHIP = "relationship"
    BEHAVIORAL_HABIT = "behavioral_habit"
    PSYCHOLOGY = "psychology"
    TONE_OF_SPEECH = "tone_of_speech"
    SELF_DESCRIPTION = "self_description"


WRITER_ORDER: tuple[WriterKind, ...] = tuple(WriterKind)

# Trait each writer is closest to, for the per-trait similarity mode.
WRITER_TRAIT = {
    WriterKind.RELATIONSHIP: "personality",
    WriterKind.BEHAVIORAL_HABIT: "habits",
    WriterKind.PSYCHOLOGY: "significant_events",
    WriterKind.TONE_OF_SPEECH: "speech_tone",
    WriterKind.SELF_DESCRIPTION: "appearance",
}


class CandidateStatus(Enum):
    GENERATED = "generated"
    SELECTED_FOR_WRITER = "selected_for_writer"
    DISCARDED_REPETITION = "discarded_repetition"
    DISCARDED_LOW_CS = "discarded_low_cs"
    INJECTED = "injected"


@dataclass
class PersonaCandidate:
    writer: WriterKind
    text: str
    sample_index: int
    persona_similarity: float | None = None
    repetition_score: float | None = None
    cs: float | None = None
    status: CandidateStatus = CandidateStatus.GENERATED

    def to_dict(self) -> dict:
        return {
            "writer": self.writer.value,
            "text": self.text,
            "sample_index": self.sample_index,
            "persona_similarity": self.persona_similarity,
            "repetition_score": self.repetition_score,
            "cs": self.cs,
            "status": self.status.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PersonaCandidate":
        return cls(
            writer=WriterKind(data["writer"]),
            text=data["text"],
            sample_index=data["sample_index"],
            persona_similarity=data.get("persona_similarity"),
            repetition_score=data.get("repetition_score"),
            cs=data.get("cs"),
            status=CandidateStatus(data["status"]),
        )


@dataclass(frozen=True)
class MWParams:
    k: int = 8
    repetition_threshold: float = 0.0003
    cs_threshold: float = 0.1
    repetition_reference_window: int = 3
    per_trait_similarity: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.repetition_threshold < 0 or self.cs_threshold < 0:
            raise ConfigError("thresholds must be >= 0")
        if self.repetition_reference_window < 0:
            raise ConfigError("repetition_reference_window must be >= 0")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "repetition_threshold": self.repetition_threshold,
            "cs_threshold": self.cs_threshold,
            "repetition_reference_window": self.repetition_reference_window,
            "per_trait_similarity": self.per_trait_similarity,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MWParams":
        return cls(**data)


@dataclass
class InjectionRecord:
    leaf_id: str
    paragraph_index: int
    candidates: list[PersonaCandidate]
    injected_text: str | None

    def to_dict(self) -> dict:
        return {
            "leaf_id": self.leaf_id,
            "paragraph_index": self.paragraph_index,
            "candidates": [c.to_dict() for c in self.candidates],
            "injected_text": self.injected_text,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InjectionRecord":
        return cls(
            leaf_id=data["leaf_id"],
            paragraph_index=data["paragraph_index"],
            candidates=[PersonaCandidate.from_dict(c) for c in data["candidates"]],
            injected_text=data.get("injected_text"),
        )


@dataclass
class ParagraphRecord:
    leaf_id: str
    text: str
    injection: InjectionRecord | None = None

    def to_dict(self) -> dict:
        return {
            "leaf_id": self.leaf_id,
            "text": self.text,
            "injection": self.injection.to_dict() if self.injection else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParagraphRecord":
        return cls(
            leaf_id=data["leaf_id"],
            text=data["text"],
            injection=InjectionRecord.from_dict(data["injection"])
            if data.get("injection")
            else None,
        )


@dataclass
class StoryBundle:
    elements: StoryElements
    persona_versions: list[Persona]
    outline: OutlineTree
    paragraphs: list[ParagraphRecord]
    config_echo: dict
    seed: int
    scorer_used: str = "baseline"
    scorer_downgraded: bool = False

    def final_story(self) -> str:
        return "\n\n".join(p.text for p in self.paragraphs)

    def current_persona(self) -> Persona:
        return self.persona_versions[-1]

    def to_dict(self) -> dict:
        return {
            "elements": self.elements.to_dict(),
            "persona_versions": [p.to_dict() for p in self.persona_versions],
            "outline": self.outline.to_dict(),
            "paragraphs": [p.to_dict() for p in self.paragraphs],
            "config_echo": self.config_echo,
            "seed": self.seed,
            "scorer": {"used": self.scorer_used, "downgraded": self.scorer_downgraded},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StoryBundle":
        return cls(
            elements=StoryElements.from_dict(data["elements"]),
            persona_versions=[Persona.from_dict(p) for p in data["persona_versions"]],
            outline=OutlineTree.from_dict(data["outline"]),
            paragraphs=[ParagraphRecord.from_dict(p) for p in data["paragraphs"]],
            config_echo=data["config_echo"],
            seed=data["seed"],
            scorer_used=data.get("scorer", {}).get("used", "baseline"),
            scorer_downgraded=data.get("scorer", {}).get("downgraded", False),
        )


def _stable_rng(seed: int, *parts: str) -> random.Random:
    digest = hashlib.sha256("\x1f".join([str(seed), *parts]).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def generate_candidates(
    persona: Persona,
    current_paragraph: str,
    params: MWParams,
    chat: ChatProvider,
) -> list[PersonaCandidate]:
    """K independent samples per writer; whitespace-only samples are dropped."""
    out: list[PersonaCandidate] = []
    traits = persona.render_numbered()
    for writer in WRITER_ORDER:
        prompt = prompts.render(
            "mw/candidate",
            name=persona.name,
            personal_traits=traits,
            writer_instruction=prompts.writer_instruction(writer.value),
            current_context=current_paragraph,
        )
        usable = 0
        for i in range(params.k):
            reply = chat.chat(
                ChatRequest.user(prompt, key=f"mw_candidate:{writer.value}:{i}")
            )
            text = reply.text.strip()
            if not text:
                continue
            out.append(PersonaCandidate(writer=writer, text=text, sample_index=i))
            usable += 1
        if usable == 0:
            log.warning("writer %s produced no usable candidates; skipped", writer.value)
    return out


def select_per_writer(
    candidates: list[PersonaCandidate],
    persona: Persona,
    embed: EmbeddingProvider,
    per_trait: bool = False,
) -> list[PersonaCandidate]:
    """Top-1 per writer by cosine against the persona text (full concatenation
    by default, the writer-matched trait in per-trait mode). Equal similarity
    resolves to the lower sample index."""
    if not candidates:
        return []
    references: dict[WriterKind, str] = {}
    for writer in WRITER_ORDER:
        references[writer] = (
            getattr(persona, WRITER_TRAIT[writer]) if per_trait else persona.full_text()
        )
    texts = [c.text for c in candidates] + list(dict.fromkeys(references.values()))
    vectors = embed.embed(texts)
    ref_vector = {}
    offset = len(candidates)
    for i, ref_text in enumerate(dict.fromkeys(references.values())):
        ref_vector[ref_text] = vectors[offset + i].values
    for candidate, vec in zip(candidates, vectors):
        candidate.persona_similarity = cosine(
            vec.values, ref_vector[references[candidate.writer]]
        )
    selected: list[PersonaCandidate] = []
    for writer in WRITER_ORDER:
        pool = [c for c in candidates if c.writer is writer]
        if not pool:
            continue
        best = sorted(pool, key=lambda c: (-c.persona_similarity, c.sample_index))[0]
        best.status = CandidateStatus.SELECTED_FOR_WRITER
        selected.append(best)
    return selected


def repetition_filter(
    selected: list[PersonaCandidate],
    reference_texts: list[str],
    params: MWParams,
) -> list[PersonaCandidate]:
    """Discard candidates whose mean of sentence-level BLEU-2/BLEU-3 against
    the reference sentences exceeds the threshold. Empty reference set lets
    everything through at score 0; an exact threshold hit survives."""
    survivors: list[PersonaCandidate] = []
    for candidate in selected:
        if not reference_texts:
            candidate.repetition_score = 0.0
        else:
            total = 0.0
            for ref in reference_texts:
                total += (bleu_n(candidate.text, ref, 2) + bleu_n(candidate.text, ref, 3)) / 2.0
            candidate.repetition_score = total / len(reference_texts)
        if candidate.repetition_score > params.repetition_threshold:
            candidate.status = CandidateStatus.DISCARDED_REPETITION
        else:
            survivors.append(candidate)
    return survivors


def rerank_select(
    survivors: list[PersonaCandidate],
    current_paragraph: str,
    scorer: Scorer,
    params: MWParams,
) -> PersonaCandidate | None:
    """Continuation-score argmax over the survivors; value ties resolve in
    writer order. Nothing is injected when no score clears the threshold."""
    if not survivors:
        return None
    writer_rank = {writer: i for i, writer in enumerate(WRITER_ORDER)}
    for candidate in survivors:
        candidate.cs = scorer.score(current_paragraph, candidate.text)
    best = sorted(
        survivors,
        key=lambda c: (-c.cs, writer_rank[c.writer], c.sample_index),
    )[0]
    if best.cs > params.cs_threshold:
        best.status = CandidateStatus.INJECTED
        return best
    for candidate in survivors:
        candidate.status = CandidateStatus.DISCARDED_LOW_CS
    return None


def inject(paragraph: str, candidate: PersonaCandidate | None) -> str:
    """Append the winning candidate with a single joining space."""
    if candidate is None:
        return paragraph
    return f"{paragraph.rstrip()} {candidate.text}"


# Questionnaire slots 1..5 map onto these persona fields; slot 6 (feelings
# about others) has no trait of its own. Dark secret and family environment
# are never re-asked and carry over unchanged.
_UPDATE_FIELDS = ("appearance", "speech_tone", "personality", "significant_events", "habits")


def update_persona(persona: Persona, node_story: str, chat: ChatProvider) -> Persona:
    """Re-imagine the mutable traits after an outline node completes.

    Parse failures are not fatal: after the re-prompt budget the previous
    persona is kept unchanged and the skip is logged.
    """
    context = (
        f"{node_story}\nBelow is the statements you provided about yourself : "
        f"{persona.render_numbered()}"
    )
    prompt = prompts.render(
        "update/persona_update", name=persona.name, current_context=context
    )
    for attempt in range(UPDATE_REPROMPTS + 1):
        suffix = "" if attempt == 0 else "\nAnswer all 6 questions, numbered 1. to 6."
        reply = chat.chat(
            ChatRequest.user(
                prompt + suffix, key=f"persona_update:{persona.version}:{attempt}"
            )
        )
        sections = parse_numbered_sections(reply.text, expected=6)
        missing = [i for i in range(1, 6) if i not in sections]
        if missing:
            log.warning(
                "persona update attempt %d missing sections %s", attempt + 1, missing
            )
            continue
        updates = {
            field_name: sections[i]
            for i, field_name in enumerate(_UPDATE_FIELDS, start=1)
        }
        return bump_version(persona, **updates)
    log.warning(
        "persona update unparseable after %d attempts; keeping version %d",
        UPDATE_REPROMPTS + 1,
        persona.version,
    )
    return persona


class Drafter:
    """Drafts one passage at a time, enforcing depth-first leaf order."""

    def __init__(
        self,
        tree: OutlineTree,
        elements: StoryElements,
        plot: MainPlotSpec,
        chat: ChatProvider,
    ):
        self.leaves = tree.leaves()
        self.cursor = 0
        self.chat = chat
        self.plot = plot
        self.description = (
            format_name_description(
                elements.character.character_name, elements.character.description
            )
            + f" Setting: {elements.background.description}"
        )
        self.name = elements.character.character_name

    def skip_to(self, index: int) -> None:
        if not 0 <= index <= len(self.leaves):
            raise ConfigError(f"leaf index {index} out of range")
        self.cursor = index

    def expected_leaf(self) -> OutlineNode | None:
        return self.leaves[self.cursor] if self.cursor < len(self.leaves) else None

    def draft_passage(
        self,
        leaf: OutlineNode,
        story_so_far: str,
        persona: Persona,
        passage_index: int = 0,
    ) -> str:
        expected = self.expected_leaf()
        if expected is None or leaf.id != expected.id:
            raise ConfigError(
                f"leaf {leaf.id!r} drafted out of order; expected "
                f"{expected.id if expected else 'nothing (tree exhausted)'}"
            )
        prompt = prompts.render(
            "draft/passage",
            main_plot=self.plot.summary_5_sentences,
            description=self.description,
            personal_traits=persona.render_numbered(),
            story_so_far=story_so_far[-STORY_CONTEXT_CHARS:] or "(the story has not started yet)",
            leaf_summary=leaf.summary,
            name=self.name,
        )
        for attempt in range(DRAFT_REPROMPTS + 1):
            reply = self.chat.chat(
                ChatRequest.user(
                    prompt, key=f"draft_passage:{leaf.id}:{passage_index}:{attempt}"
                )
            )
            text = reply.text.strip()
            if text:
                return text
        raise MalformedResponse(f"empty draft reply for leaf {leaf.id!r}")

    def advance(self) -> None:
        self.cursor += 1


@dataclass
class DraftState:
    """Checkpointable progress of a drafting run."""

    personas: list[Persona]
    paragraphs: list[ParagraphRecord] = field(default_factory=list)
    injected_texts: list[str] = field(default_factory=list)
    next_leaf_index: int = 0

    def to_dict(self) -> dict:
        return {
            "personas": [p.to_dict() for p in self.personas],
            "paragraphs": [p.to_dict() for p in self.paragraphs],
            "injected_texts": list(self.injected_texts),
            "next_leaf_index": self.next_leaf_index,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DraftState":
        return cls(
            personas=[Persona.from_dict(p) for p in data["personas"]],
            paragraphs=[ParagraphRecord.from_dict(p) for p in data["paragraphs"]],
            injected_texts=list(data["injected_texts"]),
            next_leaf_index=data["next_leaf_index"],
        )


def reference_sentences(
    injected_texts: list[str], paragraphs: list[str], window: int
) -> list[str]:
    """Sentence-split repetition references: all prior injected texts plus
    the last `window` paragraphs."""
    refs: list[str] = []
    for text in injected_texts:
        refs.extend(split_sentences(text))
    tail = paragraphs[-window:] if window > 0 else []
    for paragraph in tail:
        refs.extend(split_sentences(paragraph))
    return refs


def _top_unit(leaf_id: str) -> str:
    return leaf_id.split(".", 1)[0]


def run_draft(
    tree: OutlineTree,
    elements: StoryElements,
    persona: Persona,
    plot: MainPlotSpec,
    params: MWParams,
    providers: ProviderSet,
    scorer: Scorer,
    seed: int = 0,
    config_echo: dict | None = None,
    mw_enabled: bool = True,
    update_per_leaf: bool = False,
    state: DraftState | None = None,
    on_leaf_complete=None,
) -> StoryBundle:
    """Draft every leaf in depth-first order with injection after each passage
    and a persona update when an outline node completes. `state` resumes a
    checkpointed run; `on_leaf_complete(state)` fires after each leaf."""
    leaves = tree.leaves()
    if not leaves:
        raise ConfigError("outline has no leaves to draft")
    if state is None:
        state = DraftState(personas=[persona])
    drafter = Drafter(tree, elements, plot, providers.chat)
    drafter.skip_to(state.next_leaf_index)

    def build_bundle() -> StoryBundle:
        return StoryBundle(
            elements=elements,
            persona_versions=list(state.personas),
            outline=tree,
            paragraphs=list(state.paragraphs),
            config_echo=dict(config_echo or {}),
            seed=seed,
            scorer_used=getattr(scorer, "name", "baseline"),
            scorer_downgraded=getattr(scorer, "downgraded", False),
        )

    try:
        for index in range(state.next_leaf_index, len(leaves)):
            leaf = leaves[index]
            current = state.personas[-1]
            passage_rng = _stable_rng(seed, "passages", leaf.id)
            n_passages = passage_rng.randint(
                tree.params.min_passages_per_node, tree.params.max_passages_per_node
            )
            for passage_index in range(n_passages):
                story_so_far = "\n\n".join(p.text for p in state.paragraphs)
                paragraph = drafter.draft_passage(leaf, story_so_far, current, passage_index)
                record: InjectionRecord | None = None
                if mw_enabled:
                    candidates = generate_candidates(current, paragraph, params, providers.chat)
                    selected = select_per_writer(
                        candidates, current, providers.embedding,
                        per_trait=params.per_trait_similarity,
                    )
                    refs = reference_sentences(
                        state.injected_texts,
                        [p.text for p in state.paragraphs],
                        params.repetition_reference_window,
                    )
                    survivors = repetition_filter(selected, refs, params)
                    winner = rerank_select(survivors, paragraph, scorer, params)
                    final_text = inject(paragraph, winner)
                    record = InjectionRecord(
                        leaf_id=leaf.id,
                        paragraph_index=len(state.paragraphs),
                        candidates=candidates,
                        injected_text=winner.text if winner else None,
                    )
                    if winner is not None:
                        state.injected_texts.append(winner.text)
                else:
                    final_text = paragraph
                state.paragraphs.append(
                    ParagraphRecord(leaf_id=leaf.id, text=final_text, injection=record)
                )
            drafter.advance()
            unit = _top_unit(leaf.id)
            unit_done = (
                update_per_leaf
                or index == len(leaves) - 1
                or _top_unit(leaves[index + 1].id) != unit
            )
            if unit_done:
                if update_per_leaf:
                    node_story = "\n\n".join(
                        p.text for p in state.paragraphs if p.leaf_id == leaf.id
                    )
                else:
                    node_story = "\n\n".join(
                        p.text for p in state.paragraphs if _top_unit(p.leaf_id) == unit
                    )
                updated = update_persona(current, node_story, providers.chat)
                if updated.version != current.version:
                    state.personas.append(updated)
            state.next_leaf_index = index + 1
            if on_leaf_complete is not None:
                on_leaf_complete(state)
    except ProviderError as exc:
        raise DraftError(
            f"draft interrupted at leaf index {state.next_leaf_index}: {exc}",
            partial_bundle=build_bundle(),
            cause=exc,
        ) from exc
    return build_bundle()

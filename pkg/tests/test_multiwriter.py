from __future__ import annotations

import pytest

from cci.cs_dataset import BaselineScorer, FallbackScorer, RemoteScorer
from cci.errors import ConfigError, DraftError, MalformedResponse
from cci.imagination import ElementKind, Provenance, StoryElement, StoryElements
from cci.multiwriter import (
    CandidateStatus,
    Drafter,
    DraftState,
    MWParams,
    PersonaCandidate,
    StoryBundle,
    WRITER_ORDER,
    WriterKind,
    generate_candidates,
    inject,
    reference_sentences,
    repetition_filter,
    rerank_select,
    run_draft,
    select_per_writer,
    update_persona,
)
from cci.planner import OutlineParams, parse_outline
from cci.providers import ProviderSet, UsageLedger, mock_provider_set
from cci.providers.mock import MockEmbeddingProvider, MockImageProvider, MockVisionProvider
from cci.specification import MainPlotSpec

from .conftest import FnChat, ScriptedChat
from .oracles import oracle_bleu, oracle_cosine
from .test_specification import make_persona


class FixedScorer:
    name = "fixed"

    def __init__(self, table):
        self.table = table  # candidate text -> cs

    def score(self, prev, cand):
        return self.table[cand]


def _providers(chat) -> ProviderSet:
    return ProviderSet(
        chat=chat,
        image=MockImageProvider(seed=1),
        vision=MockVisionProvider(seed=1),
        embedding=MockEmbeddingProvider(),
        ledger=UsageLedger(),
    )


def _candidate(writer, text, index=0, status=CandidateStatus.SELECTED_FOR_WRITER):
    return PersonaCandidate(writer=writer, text=text, sample_index=index, status=status)


OUTLINE_TEXT = "1. A\n1.1 x\n1.2 y\n2. B\n2.1 u\n2.2 v"


def _tree(max_passages=2):
    params = OutlineParams(max_passages_per_node=max_passages)
    return parse_outline(OUTLINE_TEXT, params)


def _elements() -> StoryElements:
    return StoryElements(
        character=StoryElement(
            kind=ElementKind.CHARACTER, description="an archivist",
            provenance=Provenance.TEXT_ONLY, character_name="Mira",
        ),
        background=StoryElement(
            kind=ElementKind.BACKGROUND, description="a flooded library",
            provenance=Provenance.TEXT_ONLY,
        ),
        main_plot=StoryElement(
            kind=ElementKind.MAIN_PLOT, description="the water rises",
            provenance=Provenance.TEXT_ONLY,
        ),
    )


def _plot() -> MainPlotSpec:
    return MainPlotSpec(
        original="the water rises", qa_chain=(),
        why_inevitable="flood", protagonist_response="catalogue",
        summary_5_sentences="the story of a flood. I return. I count. I mend. I leave.",
    )


# --- candidate generation ---------------------------------------------------------


def test_generate_candidates_counts_and_keys():
    chat = FnChat(lambda req: f"candidate for {req.key}")
    candidates = generate_candidates(make_persona(), "The paragraph.", MWParams(k=8), chat)
    assert len(candidates) == 40
    per_writer = {w: 0 for w in WRITER_ORDER}
    for c in candidates:
        per_writer[c.writer] += 1
        assert c.status is CandidateStatus.GENERATED
    assert all(count == 8 for count in per_writer.values())


def test_generate_candidates_drops_whitespace_samples():
    def reply(req):
        writer, index = req.key.split(":")[1:]
        if writer == "tone_of_speech" and int(index) < 3:
            return "   "
        return f"text {req.key}"

    candidates = generate_candidates(make_persona(), "P.", MWParams(k=8), FnChat(reply))
    tone = [c for c in candidates if c.writer is WriterKind.TONE_OF_SPEECH]
    assert len(tone) == 5
    assert len(candidates) == 37


def test_generate_candidates_k_one():
    chat = FnChat(lambda req: f"c {req.key}")
    candidates = generate_candidates(make_persona(), "P.", MWParams(k=1), chat)
    assert len(candidates) == 5


def test_generate_candidates_zero_sample_writer_logged(caplog):
    def reply(req):
        return "" if req.key.startswith("mw_candidate:psychology") else "ok"

    with caplog.at_level("WARNING"):
        candidates = generate_candidates(make_persona(), "P.", MWParams(k=2), FnChat(reply))
    assert "psychology" in caplog.text
    assert all(c.writer is not WriterKind.PSYCHOLOGY for c in candidates)


# --- per-writer selection ----------------------------------------------------------


def test_select_per_writer_prefers_persona_overlap():
    persona = make_persona(habits="I sharpen the copper compass nightly")
    embed = MockEmbeddingProvider()
    candidates = [
        _candidate(WriterKind.RELATIONSHIP, "aaa bbb ccc", 0, CandidateStatus.GENERATED),
        _candidate(
            WriterKind.RELATIONSHIP,
            "I sharpen the copper compass nightly too",
            1,
            CandidateStatus.GENERATED,
        ),
    ]
    selected = select_per_writer(candidates, persona, embed)
    assert len(selected) == 1
    assert selected[0].sample_index == 1
    assert selected[0].status is CandidateStatus.SELECTED_FOR_WRITER


def test_select_per_writer_matches_exhaustive_oracle():
    persona = make_persona()
    embed = MockEmbeddingProvider()
    chat = FnChat(lambda req: f"sample {req.key} " + req.key.replace(":", " "))
    candidates = generate_candidates(persona, "The paragraph.", MWParams(k=8), chat)
    assert len(candidates) == 40
    selected = select_per_writer(candidates, persona, embed)

    persona_vec = embed.embed([persona.full_text()])[0].values
    expected: dict[WriterKind, PersonaCandidate] = {}
    for candidate in candidates:
        vec = embed.embed([candidate.text])[0].values
        sim = oracle_cosine(vec, persona_vec)
        best = expected.get(candidate.writer)
        if best is None or sim > best[0] + 1e-15:
            expected[candidate.writer] = (sim, candidate)
    assert {c.writer: c.text for c in selected} == {
        w: cand.text for w, (sim, cand) in expected.items()
    }
    for candidate in selected:
        vec = embed.embed([candidate.text])[0].values
        assert candidate.persona_similarity == pytest.approx(
            oracle_cosine(vec, persona_vec), abs=1e-9
        )


def test_select_per_writer_single_candidate():
    persona = make_persona()
    only = _candidate(WriterKind.PSYCHOLOGY, "one", 3, CandidateStatus.GENERATED)
    selected = select_per_writer([only], persona, MockEmbeddingProvider())
    assert selected == [only]


def test_select_per_writer_tie_lower_index_wins():
    persona = make_persona()
    twins = [
        _candidate(WriterKind.PSYCHOLOGY, "identical text", 4, CandidateStatus.GENERATED),
        _candidate(WriterKind.PSYCHOLOGY, "identical text", 1, CandidateStatus.GENERATED),
    ]
    selected = select_per_writer(twins, persona, MockEmbeddingProvider())
    assert selected[0].sample_index == 1


def test_select_per_writer_per_trait_mode():
    persona = make_persona(speech_tone="clipped harbor slang phrases")
    embed = MockEmbeddingProvider()
    candidates = [
        _candidate(WriterKind.TONE_OF_SPEECH, "clipped harbor slang phrases echoed", 0,
                   CandidateStatus.GENERATED),
        _candidate(WriterKind.TONE_OF_SPEECH, "dark secret text repeated", 1,
                   CandidateStatus.GENERATED),
    ]
    selected = select_per_writer(candidates, persona, embed, per_trait=True)
    assert selected[0].sample_index == 0


# --- repetition filter ----------------------------------------------------------------


def test_repetition_filter_identity_discarded():
    candidate = _candidate(WriterKind.RELATIONSHIP, "The lantern glows over the quiet harbor.")
    survivors = repetition_filter(
        [candidate], ["The lantern glows over the quiet harbor."], MWParams()
    )
    assert survivors == []
    assert candidate.status is CandidateStatus.DISCARDED_REPETITION
    assert candidate.repetition_score == pytest.approx(1.0, abs=1e-9)
    assert candidate.repetition_score > 0.0003


def test_repetition_filter_empty_references_all_pass():
    candidates = [
        _candidate(WriterKind.RELATIONSHIP, "anything"),
        _candidate(WriterKind.PSYCHOLOGY, "else"),
    ]
    survivors = repetition_filter(candidates, [], MWParams())
    assert survivors == candidates
    assert all(c.repetition_score == 0.0 for c in candidates)


def test_repetition_filter_matches_ngram_oracle():
    cand_text = "the red fan trembled"
    refs = ["she held the red fan"]
    candidate = _candidate(WriterKind.SELF_DESCRIPTION, cand_text)
    expected = (oracle_bleu(cand_text, refs[0], 2) + oracle_bleu(cand_text, refs[0], 3)) / 2
    survivors = repetition_filter([candidate], refs, MWParams())
    assert candidate.repetition_score == pytest.approx(expected, abs=1e-9)
    if expected > 0.0003:
        assert survivors == []
        assert candidate.status is CandidateStatus.DISCARDED_REPETITION
    else:
        assert survivors == [candidate]


def test_repetition_filter_mean_over_references():
    cand_text = "the red fan trembled"
    refs = ["she held the red fan", "winter bread and salt"]
    candidate = _candidate(WriterKind.SELF_DESCRIPTION, cand_text)
    repetition_filter([candidate], refs, MWParams())
    expected = sum(
        (oracle_bleu(cand_text, r, 2) + oracle_bleu(cand_text, r, 3)) / 2 for r in refs
    ) / len(refs)
    assert candidate.repetition_score == pytest.approx(expected, abs=1e-9)


def test_repetition_filter_boundary_equal_survives():
    # an identical candidate scores exactly 1.0; with the threshold set to
    # 1.0 the score equals the threshold and must survive ("> t" discards)
    candidate = _candidate(WriterKind.RELATIONSHIP, "The exact line.")
    survivors = repetition_filter(
        [candidate], ["The exact line."], MWParams(repetition_threshold=1.0)
    )
    assert survivors == [candidate]
    assert candidate.repetition_score == pytest.approx(1.0, abs=1e-12)


# --- rerank and inject -------------------------------------------------------------------


def test_rerank_none_injected_below_threshold():
    a = _candidate(WriterKind.RELATIONSHIP, "a")
    b = _candidate(WriterKind.PSYCHOLOGY, "b")
    scorer = FixedScorer({"a": 0.05, "b": 0.08})
    winner = rerank_select([a, b], "P.", scorer, MWParams())
    assert winner is None
    assert a.status is CandidateStatus.DISCARDED_LOW_CS
    assert b.status is CandidateStatus.DISCARDED_LOW_CS


def test_rerank_argmax_injected():
    a = _candidate(WriterKind.RELATIONSHIP, "a")
    b = _candidate(WriterKind.PSYCHOLOGY, "b")
    c = _candidate(WriterKind.SELF_DESCRIPTION, "c")
    scorer = FixedScorer({"a": 0.3, "b": 0.9, "c": 0.2})
    winner = rerank_select([a, b, c], "P.", scorer, MWParams())
    assert winner is b
    assert b.status is CandidateStatus.INJECTED
    assert b.cs == 0.9
    assert a.status is CandidateStatus.SELECTED_FOR_WRITER  # not injected, not discarded


def test_rerank_tie_resolves_by_writer_order():
    relationship = _candidate(WriterKind.RELATIONSHIP, "r")
    psychology = _candidate(WriterKind.PSYCHOLOGY, "p")
    scorer = FixedScorer({"r": 0.5, "p": 0.5})
    winner = rerank_select([psychology, relationship], "P.", scorer, MWParams())
    assert winner is relationship


def test_rerank_empty_survivors():
    assert rerank_select([], "P.", FixedScorer({}), MWParams()) is None


def test_inject_joins_with_single_space():
    winner = _candidate(WriterKind.RELATIONSHIP, "C.", status=CandidateStatus.INJECTED)
    assert inject("P.", winner) == "P. C."
    assert inject("P.", None) == "P."


# --- persona update ------------------------------------------------------------------------


SIX_SECTIONS = "\n".join(
    [
        "1. My hair is now streaked with grey.",
        "2. I speak in shorter sentences now.",
        "3. I have grown warier of strangers.",
        "4. The flood left me flinching at rain on glass.",
        "5. I now check the door three times.",
        "6. I trust the ferryman a little more.",
    ]
)


def test_update_persona_field_mapping():
    persona = make_persona()
    updated = update_persona(persona, "Node story text.", ScriptedChat([SIX_SECTIONS]))
    assert updated.version == 1
    assert updated.appearance == "My hair is now streaked with grey."
    assert updated.speech_tone == "I speak in shorter sentences now."
    assert updated.personality == "I have grown warier of strangers."
    assert updated.significant_events == "The flood left me flinching at rain on glass."
    assert updated.habits == "I now check the door three times."
    # carried over unchanged
    assert updated.dark_secret == persona.dark_secret
    assert updated.family_environment == persona.family_environment


def test_update_persona_malformed_thrice_keeps_old(caplog):
    persona = make_persona()
    chat = ScriptedChat(["bad", "bad", "bad"])
    with caplog.at_level("WARNING"):
        updated = update_persona(persona, "Node story.", chat)
    assert updated is persona
    assert updated.version == 0
    assert "keeping version" in caplog.text
    assert len(chat.requests) == 3


def test_update_persona_mock_provider(mock_providers):
    persona = make_persona()
    updated = update_persona(persona, "Some node story.", mock_providers.chat)
    assert updated.version == 1


# --- drafter ------------------------------------------------------------------------------


def test_drafter_order_guard(mock_providers):
    tree = _tree()
    drafter = Drafter(tree, _elements(), _plot(), mock_providers.chat)
    leaves = tree.leaves()
    with pytest.raises(ConfigError):
        drafter.draft_passage(leaves[1], "", make_persona())
    text = drafter.draft_passage(leaves[0], "", make_persona())
    assert "Mira" in text
    drafter.advance()
    assert drafter.expected_leaf().id == leaves[1].id


def test_drafter_empty_reply_malformed():
    tree = _tree()
    drafter = Drafter(tree, _elements(), _plot(), ScriptedChat(["", ""]))
    with pytest.raises(MalformedResponse):
        drafter.draft_passage(tree.leaves()[0], "", make_persona())


# --- run_draft ----------------------------------------------------------------------------


def test_run_draft_counts_and_update_per_top_node(mock_providers):
    tree = _tree(max_passages=2)
    bundle = run_draft(
        tree, _elements(), make_persona(), _plot(), MWParams(k=2),
        mock_providers, BaselineScorer(mock_providers.embedding), seed=7,
    )
    assert 4 <= len(bundle.paragraphs) <= 8
    # 2 top-level nodes -> exactly 2 updates -> versions [0, 1, 2]
    assert [p.version for p in bundle.persona_versions] == [0, 1, 2]
    for paragraph in bundle.paragraphs:
        assert paragraph.injection is not None
        assert paragraph.injection.candidates


def test_run_draft_deterministic(mock_providers):
    kwargs = dict(seed=7)
    a = run_draft(
        _tree(), _elements(), make_persona(), _plot(), MWParams(k=2),
        mock_provider_set(7), BaselineScorer(MockEmbeddingProvider()), **kwargs,
    )
    b = run_draft(
        _tree(), _elements(), make_persona(), _plot(), MWParams(k=2),
        mock_provider_set(7), BaselineScorer(MockEmbeddingProvider()), **kwargs,
    )
    assert a.to_dict() == b.to_dict()


def test_run_draft_injection_invariants(mock_providers):
    bundle = run_draft(
        _tree(), _elements(), make_persona(), _plot(), MWParams(k=3),
        mock_providers, BaselineScorer(mock_providers.embedding), seed=11,
    )
    for paragraph in bundle.paragraphs:
        record = paragraph.injection
        injected = [c for c in record.candidates if c.status is CandidateStatus.INJECTED]
        assert len(injected) <= 1
        if record.injected_text is not None:
            assert len(injected) == 1
            winner = injected[0]
            assert winner.text == record.injected_text
            assert winner.cs > MWParams().cs_threshold
            assert paragraph.text.endswith(winner.text)
            survivors_cs = [
                c.cs for c in record.candidates if c.cs is not None
            ]
            assert winner.cs == max(survivors_cs)
        for candidate in record.candidates:
            if candidate.status is CandidateStatus.DISCARDED_REPETITION:
                assert candidate.repetition_score > MWParams().repetition_threshold
            if candidate.cs is not None:
                # cs set only for candidates that survived both filters
                assert candidate.status in (
                    CandidateStatus.SELECTED_FOR_WRITER,
                    CandidateStatus.DISCARDED_LOW_CS,
                    CandidateStatus.INJECTED,
                )


def test_run_draft_update_per_leaf_flag(mock_providers):
    bundle = run_draft(
        _tree(), _elements(), make_persona(), _plot(), MWParams(k=2),
        mock_providers, BaselineScorer(mock_providers.embedding), seed=7,
        update_per_leaf=True,
    )
    # 4 leaves -> 4 updates
    assert [p.version for p in bundle.persona_versions] == [0, 1, 2, 3, 4]


def test_run_draft_mw_disabled(mock_providers):
    bundle = run_draft(
        _tree(max_passages=3), _elements(), make_persona(), _plot(), MWParams(k=2),
        mock_providers, BaselineScorer(mock_providers.embedding), seed=7,
        mw_enabled=False,
    )
    assert all(p.injection is None for p in bundle.paragraphs)
    assert bundle.persona_versions[-1].version >= 1  # updates still happen


def test_run_draft_scorer_fallback_downgrade_flagged(stub_server, mock_providers):
    stub_server.default = (503, {"error": "down"})
    scorer = FallbackScorer(
        RemoteScorer(stub_server.url), BaselineScorer(mock_providers.embedding)
    )
    bundle = run_draft(
        _tree(), _elements(), make_persona(), _plot(), MWParams(k=2),
        mock_providers, scorer, seed=7,
    )
    assert bundle.scorer_downgraded is True
    assert bundle.scorer_used == "baseline"
    assert len(bundle.paragraphs) >= 4


def test_run_draft_scorer_fails_mid_run(stub_server, mock_providers):
    # first scorer call succeeds, every later one 5xxes: the run still
    # completes, downgraded from that point on
    stub_server.enqueue(200, {"score": 0.9})
    stub_server.default = (503, {"error": "down"})
    scorer = FallbackScorer(
        RemoteScorer(stub_server.url), BaselineScorer(mock_providers.embedding)
    )
    bundle = run_draft(
        _tree(), _elements(), make_persona(), _plot(), MWParams(k=2),
        mock_providers, scorer, seed=7,
    )
    assert bundle.scorer_downgraded is True
    assert len(bundle.paragraphs) >= 4


def test_run_draft_provider_failure_carries_partial_bundle():
    # Drafting consumes scripted replies; exhaust them mid-run via an error.
    from cci.errors import TransportError

    replies = []
    # leaf 1.1 passages: draft + 10 candidates (k=2 x 5 writers) per passage
    # supply one passage worth, then fail on the next call
    replies.append("First passage text for the leaf.")
    replies.extend([f"candidate {i}" for i in range(10)])
    # persona update for no leaf yet; next draft call explodes
    replies.append(TransportError("boom", attempts=3))
    # pad in case of extra calls before the failure point
    chat = ScriptedChat(replies + [TransportError("boom", attempts=3)] * 5)
    providers = _providers(chat)
    tree = parse_outline("1. A\n1.1 x\n1.2 y", OutlineParams(max_passages_per_node=1))
    with pytest.raises(DraftError) as info:
        run_draft(
            tree, _elements(), make_persona(), _plot(), MWParams(k=2),
            providers, BaselineScorer(providers.embedding), seed=7,
        )
    partial = info.value.partial_bundle
    assert isinstance(partial, StoryBundle)
    assert len(partial.paragraphs) >= 1


def test_run_draft_resume_from_state_matches_uninterrupted():
    providers1 = mock_provider_set(7)
    full = run_draft(
        _tree(), _elements(), make_persona(), _plot(), MWParams(k=2),
        providers1, BaselineScorer(providers1.embedding), seed=7,
    )
    # capture state after leaf 2 of 4, then resume with fresh providers
    states = []
    providers2 = mock_provider_set(7)
    run_draft(
        _tree(), _elements(), make_persona(), _plot(), MWParams(k=2),
        providers2, BaselineScorer(providers2.embedding), seed=7,
        on_leaf_complete=lambda s: states.append(DraftState.from_dict(s.to_dict())),
    )
    mid = states[1]
    assert mid.next_leaf_index == 2
    providers3 = mock_provider_set(7)
    resumed = run_draft(
        _tree(), _elements(), make_persona(), _plot(), MWParams(k=2),
        providers3, BaselineScorer(providers3.embedding), seed=7,
        state=mid,
    )
    assert resumed.to_dict() == full.to_dict()


def test_reference_sentences_window():
    injected = ["Inj one. Inj two."]
    paragraphs = ["P1 first. P1 second.", "P2 only.", "P3 a. P3 b.", "P4 here."]
    refs = reference_sentences(injected, paragraphs, window=3)
    assert "Inj one." in refs and "Inj two." in refs
    assert "P1 first." not in refs  # outside the window of 3
    assert "P2 only." in refs and "P4 here." in refs


def test_final_story_concatenation(mock_providers):
    bundle = run_draft(
        _tree(), _elements(), make_persona(), _plot(), MWParams(k=2),
        mock_providers, BaselineScorer(mock_providers.embedding), seed=7,
    )
    assert bundle.final_story() == "\n\n".join(p.text for p in bundle.paragraphs)
    # injected texts appear verbatim where their records say
    for paragraph in bundle.paragraphs:
        if paragraph.injection and paragraph.injection.injected_text:
            assert paragraph.injection.injected_text in paragraph.text


def test_bundle_serialization_round_trip(mock_providers):
    bundle = run_draft(
        _tree(), _elements(), make_persona(), _plot(), MWParams(k=2),
        mock_providers, BaselineScorer(mock_providers.embedding), seed=7,
    )
    assert StoryBundle.from_dict(bundle.to_dict()).to_dict() == bundle.to_dict()


def test_mw_params_validation():
    with pytest.raises(ConfigError):
        MWParams(k=0)
    with pytest.raises(ConfigError):
        MWParams(cs_threshold=-0.1)
    assert MWParams().k == 8
    assert MWParams().repetition_threshold == 0.0003
    assert MWParams().cs_threshold == 0.1

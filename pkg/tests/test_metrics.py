from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cci.errors import AllTraitsUnscorable, ConfigError
from cci.metrics import (
    Corpus,
    DEFAULT_NGRAM_ORDERS,
    MetricsReport,
    bleu_n,
    cosine,
    embedding_relevance,
    llm_relevance,
    ngram_averages,
    pooled_embedding,
    sentence_similarity,
    story_similarity,
    word_similarity,
)
from cci.providers.mock import MockEmbeddingProvider

from .conftest import FnChat, ScriptedChat
from .oracles import oracle_bleu, oracle_cosine
from .test_specification import make_persona

VOCAB = (
    "harbor lantern ember violin orchard ledger compass attic sparrow anchor "
    "ribbon furnace meadow archive lighthouse satchel tram monsoon parcel gate "
    "river stone cloud winter summer copper iron salt bread flame"
).split()


# --- bleu_n -----------------------------------------------------------------------


def test_bleu_identity_is_one():
    assert bleu_n("the amber cat sat", "the amber cat sat", 2) == pytest.approx(1.0, abs=1e-12)


def test_bleu_hand_derived_case():
    # p1 = 2/3, p2 = 1/2, BP = 1 -> sqrt(1/3)
    assert bleu_n("the cat sat", "the cat ran", 2) == pytest.approx(
        math.sqrt(1.0 / 3.0), abs=1e-9
    )


def test_bleu_disjoint_tokens_zero():
    for n in (1, 2, 3):
        assert bleu_n("aa bb cc", "dd ee ff", n) == 0.0


def test_bleu_zero_precision_collapses():
    # shares unigrams but no bigrams
    assert bleu_n("aa cc", "aa bb cc dd", 1) > 0.0
    assert bleu_n("aa cc", "aa bb cc dd", 2) == 0.0


def test_bleu_brevity_penalty_applied():
    # hypothesis shorter than reference: BP = exp(1 - r/h) < 1
    value = bleu_n("the cat", "the cat sat down", 1)
    assert value == pytest.approx(math.exp(1 - 4 / 2) * 1.0, abs=1e-12)


def test_bleu_empty_inputs_zero(caplog):
    with caplog.at_level("WARNING"):
        assert bleu_n("", "the cat", 1) == 0.0
        assert bleu_n("the cat", "...", 1) == 0.0
    assert "empty" in caplog.text


def test_bleu_invalid_n():
    with pytest.raises(ConfigError):
        bleu_n("a", "a", 0)


def _random_text(rng: random.Random, max_tokens: int = 40) -> str:
    return " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, max_tokens)))


def test_bleu_matches_oracle_on_50_random_fixtures():
    rng = random.Random(1234)
    for _ in range(50):
        hyp = _random_text(rng)
        ref = _random_text(rng)
        for n in (1, 2, 3):
            assert bleu_n(hyp, ref, n) == pytest.approx(
                oracle_bleu(hyp, ref, n), abs=1e-9
            ), (hyp, ref, n)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.sampled_from(VOCAB), min_size=1, max_size=25),
    st.lists(st.sampled_from(VOCAB), min_size=1, max_size=25),
    st.integers(min_value=1, max_value=3),
)
def test_bleu_oracle_property(hyp_tokens, ref_tokens, n):
    hyp, ref = " ".join(hyp_tokens), " ".join(ref_tokens)
    assert bleu_n(hyp, ref, n) == pytest.approx(oracle_bleu(hyp, ref, n), abs=1e-9)


# --- ws ---------------------------------------------------------------------------


def test_word_similarity_identical_items():
    corpus = Corpus(items=(("a", "x y z w"), ("b", "x y z w")))
    assert word_similarity(corpus) == pytest.approx(1.0, abs=1e-12)


def test_word_similarity_three_item_oracle():
    texts = {"a": "a b c", "b": "a b c", "c": "x y z"}
    corpus = Corpus(items=tuple(texts.items()))
    expected = 0.0
    pairs = 0
    for hid, hyp in texts.items():
        for rid, ref in texts.items():
            if hid == rid:
                continue
            expected += sum(oracle_bleu(hyp, ref, n) for n in (1, 2, 3)) / 3
            pairs += 1
    expected /= pairs
    assert word_similarity(corpus) == pytest.approx(expected, abs=1e-9)


def test_word_similarity_permutation_invariant():
    items = [("a", "a b c d"), ("b", "a b x d"), ("c", "p q r s")]
    ws1 = word_similarity(Corpus(items=tuple(items)))
    ws2 = word_similarity(Corpus(items=tuple(reversed(items))))
    assert ws1 == pytest.approx(ws2, abs=1e-12)


def test_word_similarity_ngram_set_flag():
    corpus = Corpus(items=(("a", "a b c d"), ("b", "a b e f")))
    full = ngram_averages(corpus, (1, 2, 3))
    reduced = ngram_averages(corpus, (2, 3))
    assert set(full) == {1, 2, 3}
    assert set(reduced) == {2, 3}
    # unigram precision dominates on this fixture
    assert word_similarity(corpus, (2, 3)) <= word_similarity(corpus, (1, 2, 3))


def test_word_similarity_needs_two_items():
    with pytest.raises(ConfigError):
        word_similarity(Corpus(items=(("a", "text"),)))


# --- ss / sim ----------------------------------------------------------------------


def test_sentence_similarity_identical_pair():
    embed = MockEmbeddingProvider()
    corpus = Corpus(items=(("a", "same text"), ("b", "same text")))
    assert sentence_similarity(corpus, embed) == pytest.approx(1.0, abs=1e-9)


def test_sentence_similarity_orthogonal_pair():
    embed = MockEmbeddingProvider()
    corpus = Corpus(items=(("a", "alpha bravo"), ("b", "carol delta")))
    assert sentence_similarity(corpus, embed) == pytest.approx(0.0, abs=1e-12)


def test_sentence_similarity_three_item_oracle():
    embed = MockEmbeddingProvider()
    texts = ["the amber lantern", "the amber harbor", "winter stone bread"]
    corpus = Corpus(items=tuple((str(i), t) for i, t in enumerate(texts)))
    vectors = [v.values for v in embed.embed(texts)]
    expected = 0.0
    pairs = 0
    for i in range(3):
        for j in range(3):
            if i != j:
                expected += oracle_cosine(vectors[i], vectors[j])
                pairs += 1
    expected /= pairs
    assert sentence_similarity(corpus, embed) == pytest.approx(expected, abs=1e-9)


def test_pooled_embedding_chunks_and_normalizes():
    embed = MockEmbeddingProvider()
    long_text = " ".join(["lantern"] * 1200)  # 3 chunks of <=512 tokens
    pooled = pooled_embedding(long_text, embed)
    assert np.linalg.norm(pooled) == pytest.approx(1.0, abs=1e-9)


def test_story_similarity_duplicates_and_oracle():
    embed = MockEmbeddingProvider()
    dup = Corpus(items=(("a", "the same story text"), ("b", "the same story text")))
    assert story_similarity(dup, embed) == pytest.approx(1.0, abs=1e-9)

    texts = ["the amber lantern story", "the copper harbor story", "salt bread flame"]
    corpus = Corpus(items=tuple((str(i), t) for i, t in enumerate(texts)))
    pooled = [pooled_embedding(t, embed) for t in texts]
    expected = (
        oracle_cosine(pooled[0], pooled[1])
        + oracle_cosine(pooled[0], pooled[2])
        + oracle_cosine(pooled[1], pooled[2])
    ) / 3
    assert story_similarity(corpus, embed) == pytest.approx(expected, abs=1e-9)


def test_directionality_near_duplicates_vs_disjoint():
    rng = random.Random(7)
    near = []
    for i in range(20):
        base = "the amber lantern waits by the quiet harbor tonight".split()
        base[rng.randrange(len(base))] = rng.choice(VOCAB)
        near.append((f"n{i}", " ".join(base)))
    disjoint = [
        (f"d{i}", " ".join(f"tok{i}x{j}" for j in range(8))) for i in range(20)
    ]
    embed = MockEmbeddingProvider()
    near_corpus = Corpus(items=tuple(near))
    disjoint_corpus = Corpus(items=tuple(disjoint))
    assert word_similarity(near_corpus) > word_similarity(disjoint_corpus)
    assert sentence_similarity(near_corpus, embed) > sentence_similarity(disjoint_corpus, embed)


# --- relevance ----------------------------------------------------------------------


def test_embedding_relevance_identity():
    embed = MockEmbeddingProvider()
    story = "the amber lantern waits by the harbor"
    persona = make_persona(**{t: story for t in (
        "dark_secret", "family_environment", "appearance", "speech_tone",
        "personality", "significant_events", "habits",
    )})
    assert embedding_relevance(persona, story, embed) == pytest.approx(1.0, abs=1e-9)


def test_embedding_relevance_disjoint_vocab():
    embed = MockEmbeddingProvider()
    # trait and story vocabulary land in disjoint hash buckets
    buckets = {MockEmbeddingProvider._bucket(t) for t in ("alpha", "bravo", "carol", "delta")}
    assert len(buckets) == 4
    persona = make_persona(**{t: "alpha bravo" for t in (
        "dark_secret", "family_environment", "appearance", "speech_tone",
        "personality", "significant_events", "habits",
    )})
    assert embedding_relevance(persona, "carol delta", embed) == pytest.approx(0.0, abs=1e-12)


def test_llm_relevance_parses_plain_number():
    chat = FnChat(lambda req: "0.7")
    assert llm_relevance(make_persona(), "story", chat) == pytest.approx(0.7)


def test_llm_relevance_parses_first_number_variant():
    chat = FnChat(lambda req: "score: 0.25\nbecause reasons")
    assert llm_relevance(make_persona(), "story", chat) == pytest.approx(0.25)


def test_llm_relevance_all_unscorable():
    chat = FnChat(lambda req: "great story")
    with pytest.raises(AllTraitsUnscorable):
        llm_relevance(make_persona(), "story", chat)


def test_llm_relevance_reprompt_recovers_and_skips():
    # First trait: "great" then "0.5" (re-prompt works). Remaining 6 traits: "0.5".
    replies = ["great", "0.5"] + ["0.5"] * 6
    chat = ScriptedChat(replies)
    assert llm_relevance(make_persona(), "story", chat) == pytest.approx(0.5)
    assert len(chat.requests) == 8


def test_llm_relevance_out_of_range_reprompted():
    replies = []
    for _ in range(7):
        replies.extend(["8", "0.4"])  # out of range then valid
    chat = ScriptedChat(replies)
    assert llm_relevance(make_persona(), "story", chat) == pytest.approx(0.4)


# --- report -------------------------------------------------------------------------


def test_metrics_report_serialization():
    report = MetricsReport(ws=0.5, per_ngram={1: 0.6, 2: 0.4}, ngram_orders=(1, 2))
    payload = report.to_dict()
    assert payload["ws"] == 0.5
    assert payload["per_ngram"] == {"1": 0.6, "2": 0.4}
    assert payload["config"]["ngram_orders"] == [1, 2]


def test_cosine_zero_vector_is_zero():
    assert cosine([0.0, 0.0], [1.0, 0.0]) == 0.0


def test_default_ngram_orders():
    assert DEFAULT_NGRAM_ORDERS == (1, 2, 3)

"""Wire compatibility: the primary package's scorer client runs unmodified
against this server over real HTTP."""

from __future__ import annotations

import pytest
import requests

pytest.importorskip("cci")

from cci.cs_dataset import BaselineScorer, FallbackScorer, RemoteScorer, remote_score
from cci.providers.mock import MockEmbeddingProvider


def test_healthz_reports_fingerprint(served_model):
    body = requests.get(f"{served_model}/healthz", timeout=5).json()
    assert body["status"] == "ok"
    assert body["fingerprint"]


def test_primary_remote_score_round_trip(served_model):
    score = remote_score("The lantern glows.", "The harbor answers.", served_model)
    assert isinstance(score, float)
    assert 0.0 <= score <= 1.0


def test_primary_remote_score_is_deterministic(served_model):
    a = remote_score("Same prev text.", "Same cand text.", served_model)
    b = remote_score("Same prev text.", "Same cand text.", served_model)
    assert a == b


def test_malformed_request_via_primary_transport(served_model):
    response = requests.post(f"{served_model}/score", json={"prev": "only"}, timeout=5)
    assert response.status_code == 400


def test_fallback_scorer_stays_on_remote(served_model):
    scorer = FallbackScorer(
        RemoteScorer(served_model), BaselineScorer(MockEmbeddingProvider())
    )
    value = scorer.score("The lantern glows.", "The harbor answers.")
    assert 0.0 <= value <= 1.0
    assert scorer.downgraded is False
    assert scorer.name == "remote"


def test_separation_visible_over_the_wire(served_model):
    from .conftest import SENTINEL

    prev = "Word one two three. Word four five six."
    first = "Word seven eight nine."
    golden = f"{first} The tale {SENTINEL} onward word ten."
    hard_negative = f"{first} Word eleven twelve thirteen."
    golden_score = remote_score(prev, golden, served_model)
    hard_score = remote_score(prev, hard_negative, served_model)
    assert golden_score > hard_score

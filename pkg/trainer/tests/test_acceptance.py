"""Trainer acceptance: separation on the synthetic separable set, and wire
compatibility with the consuming pipeline's scorer client."""

from __future__ import annotations

import time
from contextlib import contextmanager

import pytest

from cs_trainer.train import TrainConfig, train

from .conftest import build_synthetic_rows, write_jsonl


@contextmanager
def criterion(name: str, limit_seconds: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] FAIL {name}")
        raise
    elapsed = time.perf_counter() - start
    assert elapsed < limit_seconds, f"{name} took {elapsed:.2f}s (limit {limit_seconds}s)"
    print(f"[ACCEPTANCE] PASS {name} ({elapsed:.2f}s)")


def test_trainer_separation(tmp_path):
    with criterion("Trainer separation on synthetic separable set", 300.0):
        dataset = write_jsonl(build_synthetic_rows(seed=1), tmp_path / "dataset.jsonl")
        report = train(
            TrainConfig(
                dataset_path=str(dataset),
                output_dir=str(tmp_path / "model"),
                epochs=8,
                seed=3,
            )
        )
        assert report.test_accuracy >= 0.9
        assert report.per_kind["golden"]["mean"] > report.per_kind["hard_negative"]["mean"]


def test_wire_compatibility(served_model):
    with criterion("Wire compatibility with pipeline scorer client", 60.0):
        pytest.importorskip("cci")
        import requests

        from cci.cs_dataset import remote_score

        health = requests.get(f"{served_model}/healthz", timeout=5)
        assert health.status_code == 200 and health.json()["fingerprint"]
        score = remote_score("The lantern glows.", "The harbor answers.", served_model)
        assert 0.0 <= score <= 1.0
        assert requests.post(
            f"{served_model}/score", json={"prev": "only"}, timeout=5
        ).status_code == 400

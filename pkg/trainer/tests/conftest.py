from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

SENTINEL = "q7continu"  # appears in golden continuations only, never first-sentence

WORDS = [f"word{i}" for i in range(40)]


def _sentence(rng: random.Random, n: int = 8) -> str:
    return (" ".join(rng.choice(WORDS) for _ in range(n)) + ".").capitalize()


def build_synthetic_rows(n_stories: int = 48, seed: int = 0) -> list[dict]:
    """Separable by construction: the sentinel token occurs exactly in the
    remainder of golden continuations. Hard negatives share the true
    successor's first sentence but lack the sentinel."""
    rng = random.Random(seed)
    rows = []
    for s in range(n_stories):
        story_id = f"story{s:03d}"
        if s < n_stories - 8:
            split = "train"
        elif s < n_stories - 4:
            split = "dev"
        else:
            split = "test"
        for i in range(3):
            prev = f"{_sentence(rng)} {_sentence(rng)}"
            successor_first = _sentence(rng)
            golden_next = f"{successor_first} The tale {SENTINEL} onward {_sentence(rng).lower()}"
            decoy = f"{_sentence(rng)} {_sentence(rng)}"
            rows.append(
                {"prev": prev, "next": golden_next, "label": 1.0, "kind": "golden",
                 "story_id": story_id, "split": split}
            )
            rows.append(
                {"prev": prev, "next": f"{successor_first} {decoy}", "label": 0.0,
                 "kind": "hard_negative", "story_id": story_id, "split": split}
            )
            rows.append(
                {"prev": prev, "next": decoy, "label": 0.0, "kind": "negative",
                 "story_id": story_id, "split": split}
            )
    return rows


def write_jsonl(rows: list[dict], path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return path


@pytest.fixture
def synthetic_dataset(tmp_path) -> Path:
    return write_jsonl(build_synthetic_rows(), tmp_path / "dataset.jsonl")


@pytest.fixture
def trained_model_dir(tmp_path, synthetic_dataset) -> Path:
    from cs_trainer.train import TrainConfig, train

    out = tmp_path / "model"
    train(
        TrainConfig(
            dataset_path=str(synthetic_dataset),
            output_dir=str(out),
            epochs=8,
            seed=3,
        )
    )
    return out


@pytest.fixture(scope="session")
def served_model(tmp_path_factory):
    """A trained model served over real HTTP on a free local port."""
    import socket
    import threading
    import time

    import requests
    import uvicorn

    from cs_trainer.serve import create_app
    from cs_trainer.train import TrainConfig, train

    tmp = tmp_path_factory.mktemp("served")
    dataset = write_jsonl(build_synthetic_rows(), tmp / "dataset.jsonl")
    model_dir = tmp / "model"
    train(TrainConfig(dataset_path=str(dataset), output_dir=str(model_dir), epochs=6, seed=3))

    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    config = uvicorn.Config(
        create_app(model_dir), host="127.0.0.1", port=port, log_level="error"
    )
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    endpoint = f"http://127.0.0.1:{port}"
    deadline = time.time() + 30
    while time.time() < deadline:
        try:
            if requests.get(f"{endpoint}/healthz", timeout=1).status_code == 200:
                break
        except requests.RequestException:
            pass
        time.sleep(0.05)
    else:
        raise RuntimeError("scorer server did not come up")
    yield endpoint
    server.should_exit = True
    thread.join(timeout=10)

"""Training loop: squared error against the 0/1 labels, seeded end to end.

The eval report carries dev/test accuracy at the 0.5 threshold and the score
distribution per example kind, which is where golden-vs-hard-negative
separation shows up.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import DegenerateData, SchemaError
from .dataset import PairExample, by_split, load_jsonl
from .features import DEFAULT_DIM, pair_features
from .model import ScoreModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    dataset_path: str
    output_dir: str
    encoder: str = "hashed"
    dim: int = DEFAULT_DIM
    epochs: int = 10
    learning_rate: float = 1e-2
    batch_size: int = 32
    seed: int = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EvalReport:
    dev_accuracy: float
    test_accuracy: float
    per_kind: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "dev_accuracy": self.dev_accuracy,
            "test_accuracy": self.test_accuracy,
            "per_kind": self.per_kind,
            "config": self.config,
        }


def _features_and_labels(model: ScoreModel, examples: list[PairExample]):
    features = pair_features(
        model.encoder, [e.prev for e in examples], [e.next for e in examples]
    )
    labels = np.array([e.label for e in examples], dtype=np.float32)
    return features, labels


def _accuracy(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    predictions = (np.clip(scores, 0.0, 1.0) >= threshold).astype(np.float32)
    return float((predictions == labels).mean())


def _kind_stats(model: ScoreModel, examples: list[PairExample]) -> dict:
    stats: dict[str, dict] = {}
    features, _ = _features_and_labels(model, examples)
    scores = np.clip(model.raw_scores(features), 0.0, 1.0)
    for kind in ("golden", "negative", "hard_negative"):
        mask = np.array([e.kind == kind for e in examples])
        if mask.any():
            kind_scores = scores[mask]
            stats[kind] = {
                "count": int(mask.sum()),
                "mean": float(kind_scores.mean()),
                "min": float(kind_scores.min()),
                "max": float(kind_scores.max()),
            }
    return stats


def train(config: TrainConfig) -> EvalReport:
    examples = load_jsonl(config.dataset_path)
    splits = by_split(examples)
    for split in ("train", "dev", "test"):
        if not splits[split]:
            raise SchemaError(f"dataset has no {split!r} examples")
    train_labels = {e.label for e in splits["train"]}
    if len(train_labels) < 2:
        raise DegenerateData(
            f"training split has a single label class: {sorted(train_labels)}"
        )

    torch.manual_seed(config.seed)
    model = ScoreModel(config.encoder, config.dim, seed=config.seed)
    features, labels = _features_and_labels(model, splits["train"])
    x = torch.from_numpy(features)
    y = torch.from_numpy(labels).unsqueeze(1)

    optimizer = torch.optim.Adam(model.net.parameters(), lr=config.learning_rate)
    loss_fn = nn.MSELoss()
    rng = np.random.default_rng(config.seed)
    model.net.train()
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            optimizer.zero_grad()
            out = model.net(x[batch])
            loss = loss_fn(out, y[batch])
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(batch)
        log.info("epoch %d mse %.5f", epoch + 1, epoch_loss / len(order))

    dev_features, dev_labels = _features_and_labels(model, splits["dev"])
    test_features, test_labels = _features_and_labels(model, splits["test"])
    report = EvalReport(
        dev_accuracy=_accuracy(model.raw_scores(dev_features), dev_labels),
        test_accuracy=_accuracy(model.raw_scores(test_features), test_labels),
        per_kind=_kind_stats(model, splits["test"]),
        config={
            "dataset_path": config.dataset_path,
            "encoder": config.encoder,
            "dim": config.dim,
            "epochs": config.epochs,
            "learning_rate": config.learning_rate,
            "batch_size": config.batch_size,
            "seed": config.seed,
            "fingerprint": model.fingerprint(),
        },
    )
    model.save(config.output_dir)
    with open(Path(config.output_dir) / "eval_report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    log.info(
        "trained: dev acc %.3f, test acc %.3f", report.dev_accuracy, report.test_accuracy
    )
    return report

"""Regression head over pair features, with save/load and a config fingerprint."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import SchemaError
from .features import make_encoder

MODEL_FILE = "weights.pt"
META_FILE = "model.json"
HIDDEN_UNITS = 64


class ScoreModel:
    """Encoder + small MLP regressing pair continuity toward {0, 1}."""

    def __init__(self, encoder_name: str, dim: int, seed: int = 0):
        self.encoder_name = encoder_name
        self.dim = dim
        self.seed = seed
        self.encoder = make_encoder(encoder_name, dim=dim)
        torch.manual_seed(seed)
        self.net = nn.Sequential(
            nn.Linear(4 * dim, HIDDEN_UNITS),
            nn.ReLU(),
            nn.Linear(HIDDEN_UNITS, 1),
        )

    def fingerprint(self) -> str:
        payload = json.dumps(
            {"encoder": self.encoder.fingerprint(), "hidden": HIDDEN_UNITS, "seed": self.seed},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def raw_scores(self, features: np.ndarray) -> np.ndarray:
        self.net.eval()
        with torch.no_grad():
            out = self.net(torch.from_numpy(features.astype(np.float32)))
        return out.squeeze(1).numpy()

    def score_pair(self, prev: str, cand: str) -> float:
        from .features import pair_features

        features = pair_features(self.encoder, [prev], [cand])
        value = float(self.raw_scores(features)[0])
        if not np.isfinite(value):
            # the head is tiny and inputs are normalized; treat any numeric
            # escape as a neutral score rather than propagating NaN
            return 0.5
        return value

    def save(self, model_dir: str | Path) -> None:
        directory = Path(model_dir)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.net.state_dict(), directory / MODEL_FILE)
        meta = {
            "encoder": self.encoder_name,
            "dim": self.dim,
            "seed": self.seed,
            "fingerprint": self.fingerprint(),
        }
        with open(directory / META_FILE, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2)

    @classmethod
    def load(cls, model_dir: str | Path) -> "ScoreModel":
        directory = Path(model_dir)
        meta_path = directory / META_FILE
        weights_path = directory / MODEL_FILE
        if not meta_path.is_file() or not weights_path.is_file():
            raise SchemaError(f"no trained model under {directory}")
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        model = cls(meta["encoder"], meta["dim"], seed=meta.get("seed", 0))
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.net.load_state_dict(state)
        if model.fingerprint() != meta.get("fingerprint"):
            raise SchemaError("model fingerprint mismatch; refusing to serve")
        return model

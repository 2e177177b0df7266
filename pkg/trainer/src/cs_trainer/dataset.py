"""JSONL dataset loading and validation.

The input contract, one object per line:
{"prev": str, "next": str, "label": 0.0|1.0, "kind": "golden"|"negative"|
 "hard_negative", "story_id": str, "split": "train"|"dev"|"test"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import SchemaError

REQUIRED_FIELDS = ("prev", "next", "label", "kind", "story_id", "split")
KINDS = ("golden", "negative", "hard_negative")
SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class PairExample:
    prev: str
    next: str
    label: float
    kind: str
    story_id: str
    split: str


def _validate_row(row: dict, line_no: int) -> PairExample:
    missing = [f for f in REQUIRED_FIELDS if f not in row]
    if missing:
        raise SchemaError(f"line {line_no}: missing fields {missing}")
    if not isinstance(row["prev"], str) or not row["prev"].strip():
        raise SchemaError(f"line {line_no}: prev must be a non-empty string")
    if not isinstance(row["next"], str) or not row["next"].strip():
        raise SchemaError(f"line {line_no}: next must be a non-empty string")
    if row["label"] not in (0, 1, 0.0, 1.0):
        raise SchemaError(f"line {line_no}: label must be 0 or 1, got {row['label']!r}")
    if row["kind"] not in KINDS:
        raise SchemaError(f"line {line_no}: unknown kind {row['kind']!r}")
    if row["split"] not in SPLITS:
        raise SchemaError(f"line {line_no}: unknown split {row['split']!r}")
    if (row["kind"] == "golden") != (float(row["label"]) == 1.0):
        raise SchemaError(
            f"line {line_no}: kind {row['kind']!r} conflicts with label {row['label']!r}"
        )
    return PairExample(
        prev=row["prev"],
        next=row["next"],
        label=float(row["label"]),
        kind=row["kind"],
        story_id=str(row["story_id"]),
        split=row["split"],
    )


def load_jsonl(path: str | Path) -> list[PairExample]:
    file = Path(path)
    if not file.is_file():
        raise SchemaError(f"dataset file not found: {file}")
    examples: list[PairExample] = []
    with open(file, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {line_no}: invalid JSON: {exc}") from exc
            if not isinstance(row, dict):
                raise SchemaError(f"line {line_no}: expected an object")
            examples.append(_validate_row(row, line_no))
    if not examples:
        raise SchemaError(f"dataset {file} is empty")
    return examples


def by_split(examples: list[PairExample]) -> dict[str, list[PairExample]]:
    out: dict[str, list[PairExample]] = {split: [] for split in SPLITS}
    for example in examples:
        out[example.split].append(example)
    return out

"""Typographic corruption of generated records.

Models the error classes commonly found in real person data: OCR
confusions, phonetically plausible respellings, slips onto neighbouring
keys, and plain random edits.  Every corrupted record keeps its entity
id (that is the ground truth) but gets a tagged pseudonym, as a copy at
another station would.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from pprl.harness.generate import DatasetRecord
from pprl.harness.tables import load_keyboard_adjacency, load_substitution_rules

__all__ = ["CorruptionConfig", "corrupt_records"]

_LETTERS = "abcdefghijklmnopqrstuvwxyzäöü"

OPERATORS = ("ocr", "phonetic", "keyboard", "edit")


@dataclass(frozen=True)
class CorruptionConfig:
    seed: int = 0
    # How many errors one corrupted record receives: value -> weight.
    error_counts: tuple[tuple[int, float], ...] = ((1, 1.0), (2, 1.0))
    operator_weights: tuple[tuple[str, float], ...] = (
        ("ocr", 1.0),
        ("phonetic", 1.0),
        ("keyboard", 1.0),
        ("edit", 1.0),
    )
    fields: tuple[str, ...] = ("first_name", "last_name", "city")

    def __post_init__(self) -> None:
        if not self.error_counts or any(
            count < 1 or weight <= 0 for count, weight in self.error_counts
        ):
            raise ValueError("error counts must be >= 1 with positive weights")
        for name, weight in self.operator_weights:
            if name not in OPERATORS:
                raise ValueError(f"unknown corruption operator {name!r}")
            if weight < 0:
                raise ValueError(f"operator {name!r} has negative weight")
        if not any(weight > 0 for _, weight in self.operator_weights):
            raise ValueError("at least one operator weight must be positive")
        if not self.fields:
            raise ValueError("no fields selected for corruption")

    @classmethod
    def from_file(cls, path: str | Path) -> "CorruptionConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        kwargs: dict = {}
        if "seed" in raw:
            kwargs["seed"] = raw["seed"]
        if "error_counts" in raw:
            kwargs["error_counts"] = tuple(
                (int(count), float(weight))
                for count, weight in raw["error_counts"].items()
            )
        if "operators" in raw:
            kwargs["operator_weights"] = tuple(
                (name, float(weight)) for name, weight in raw["operators"].items()
            )
        if "fields" in raw:
            kwargs["fields"] = tuple(raw["fields"])
        return cls(**kwargs)


class _Corruptor:
    def __init__(self, config: CorruptionConfig, rng: random.Random) -> None:
        self._config = config
        self._rng = rng
        self._ocr = load_substitution_rules("ocr_rules.csv")
        self._phonetic = load_substitution_rules("phonetic_rules.csv")
        self._keyboard = load_keyboard_adjacency()

    def corrupt_value(self, value: str) -> str:
        operators, weights = zip(*self._config.operator_weights)
        name = self._rng.choices(operators, weights)[0]
        if name == "ocr":
            return self._substitute(value, self._ocr)
        if name == "phonetic":
            return self._substitute(value, self._phonetic)
        if name == "keyboard":
            return self._keyboard_slip(value)
        return self._random_edit(value)

    def _substitute(self, value: str, rules: Sequence[tuple[str, str]]) -> str:
        lowered = value.lower()
        applicable = [rule for rule in rules if rule[0] in lowered]
        if not applicable:
            # No pattern matches; degrade to a random edit so the record
            # still receives its error.
            return self._random_edit(value)
        src, dst = applicable[self._rng.randrange(len(applicable))]
        starts = [
            i
            for i in range(len(lowered) - len(src) + 1)
            if lowered[i : i + len(src)] == src
        ]
        at = starts[self._rng.randrange(len(starts))]
        replacement = dst
        if value[at].isupper():
            replacement = dst[0].upper() + dst[1:]
        return value[:at] + replacement + value[at + len(src):]

    def _keyboard_slip(self, value: str) -> str:
        positions = [
            i for i, ch in enumerate(value) if ch.lower() in self._keyboard
        ]
        if not positions:
            return self._random_edit(value)
        at = positions[self._rng.randrange(len(positions))]
        neighbours = self._keyboard[value[at].lower()]
        slip = neighbours[self._rng.randrange(len(neighbours))]
        if value[at].isupper():
            slip = slip.upper()
        return value[:at] + slip + value[at + 1:]

    def _random_edit(self, value: str) -> str:
        rng = self._rng
        kind = rng.choice(("insert", "delete", "substitute", "transpose"))
        if not value:
            return rng.choice(_LETTERS)
        if kind == "insert":
            at = rng.randrange(len(value) + 1)
            return value[:at] + rng.choice(_LETTERS) + value[at:]
        if kind == "delete":
            at = rng.randrange(len(value))
            return value[:at] + value[at + 1:]
        if kind == "substitute":
            at = rng.randrange(len(value))
            return value[:at] + rng.choice(_LETTERS) + value[at + 1:]
        if len(value) < 2:
            return value + rng.choice(_LETTERS)
        at = rng.randrange(len(value) - 1)
        return value[:at] + value[at + 1] + value[at] + value[at + 2:]


def corrupt_records(
    records: Sequence[DatasetRecord],
    config: CorruptionConfig,
    tag: str = "c1",
) -> list[DatasetRecord]:
    """Produce one corrupted copy of every record.

    Each copy receives a number of errors drawn from the configured
    distribution; every error picks a corruptible field and an operator
    at random.  Pseudonyms are suffixed with ``tag`` so copies stay
    distinguishable; entity ids are preserved.
    """
    if not tag:
        raise ValueError("tag must be non-empty")
    rng = random.Random(config.seed)
    corruptor = _Corruptor(config, rng)
    counts, count_weights = zip(*config.error_counts)
    out: list[DatasetRecord] = []
    for record in records:
        attributes = dict(record.attributes)
        errors = rng.choices(counts, count_weights)[0]
        for _ in range(errors):
            candidates = [
                name for name in config.fields if attributes.get(name)
            ]
            if not candidates:
                break
            field_name = candidates[rng.randrange(len(candidates))]
            attributes[field_name] = corruptor.corrupt_value(
                attributes[field_name]
            )
        out.append(
            DatasetRecord(
                pseudonym=f"{record.pseudonym}-{tag}",
                entity_id=record.entity_id,
                attributes=attributes,
            )
        )
    return out

"""Pair-level evaluation of predicted links against ground truth.

A record *instance* is one row in one station file, addressed as
``(file_label, pseudonym)``.  A cross-file instance pair is a true match
exactly when both instances carry the same entity id.  True negatives
are never enumerated; they fall out of the total comparison count
arithmetically.
"""

from __future__ import annotations

import csv
import itertools
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from pprl.harness.generate import DatasetRecord
from pprl.similarity import ConfusionMatrix, Metrics, compute_metrics

__all__ = [
    "EvaluationReport",
    "GroundTruth",
    "InstanceRef",
    "evaluate",
    "read_predicted_pairs",
    "read_truth",
    "write_predicted_pairs",
    "write_truth",
]

InstanceRef = tuple[str, str]  # (file label, pseudonym)


@dataclass(frozen=True)
class GroundTruth:
    """Entity ids for every record instance across all station files."""

    entities: Mapping[InstanceRef, str]

    def __post_init__(self) -> None:
        if not self.entities:
            raise ValueError("ground truth must not be empty")

    @classmethod
    def from_files(
        cls, files: Mapping[str, Sequence[DatasetRecord]]
    ) -> "GroundTruth":
        entities: dict[InstanceRef, str] = {}
        for label, records in files.items():
            for record in records:
                ref = (label, record.pseudonym)
                if ref in entities:
                    raise ValueError(
                        f"duplicate pseudonym {record.pseudonym!r} in file "
                        f"{label!r}"
                    )
                entities[ref] = record.entity_id
        return cls(entities)

    def entity(self, ref: InstanceRef) -> str:
        try:
            return self.entities[ref]
        except KeyError:
            raise KeyError(
                f"prediction references unknown instance {ref!r}"
            ) from None

    def true_pair_count(self) -> int:
        """Number of cross-file instance pairs sharing an entity id."""
        per_entity: Counter[str] = Counter()
        per_entity_file: Counter[tuple[str, str]] = Counter()
        for (label, _), entity in self.entities.items():
            per_entity[entity] += 1
            per_entity_file[(entity, label)] += 1
        total = sum(n * (n - 1) // 2 for n in per_entity.values())
        same_file = sum(
            n * (n - 1) // 2 for n in per_entity_file.values()
        )
        return total - same_file

    def total_cross_file_comparisons(self) -> int:
        sizes: Counter[str] = Counter(label for label, _ in self.entities)
        return sum(
            a * b for a, b in itertools.combinations(sizes.values(), 2)
        )


@dataclass(frozen=True)
class EvaluationReport:
    confusion: ConfusionMatrix
    metrics: Metrics


def evaluate(
    predicted: Iterable[tuple[InstanceRef, InstanceRef]],
    truth: GroundTruth,
    total_comparisons: int | None = None,
) -> EvaluationReport:
    """Score predicted cross-file pairs against the ground truth.

    ``total_comparisons`` defaults to the full cross-file comparison
    count implied by the ground truth; pass it explicitly when the run
    compared fewer pairs.  Predictions referencing unknown instances or
    pairing a file with itself are hard errors.
    """
    unique_pairs: set[frozenset[InstanceRef]] = set()
    for left, right in predicted:
        if left[0] == right[0]:
            raise ValueError(
                f"predicted pair stays within file {left[0]!r}: "
                f"{left} / {right}"
            )
        truth.entity(left)
        truth.entity(right)
        unique_pairs.add(frozenset((left, right)))

    tp = sum(
        1
        for pair in unique_pairs
        if len({truth.entity(ref) for ref in pair}) == 1
    )
    fp = len(unique_pairs) - tp
    fn = truth.true_pair_count() - tp
    if total_comparisons is None:
        total_comparisons = truth.total_cross_file_comparisons()
    tn = total_comparisons - tp - fp - fn
    if tn < 0:
        raise ValueError(
            f"total_comparisons {total_comparisons} is below the "
            f"{tp + fp + fn} classified pairs"
        )
    confusion = ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)
    return EvaluationReport(confusion=confusion, metrics=compute_metrics(confusion))


def write_truth(
    files: Mapping[str, Sequence[DatasetRecord]], path: str | Path
) -> None:
    """Persist instance-level ground truth: ``file,pseudonym,entity_id``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["file", "pseudonym", "entity_id"])
        for label, records in files.items():
            for record in records:
                writer.writerow([label, record.pseudonym, record.entity_id])


def read_truth(path: str | Path) -> GroundTruth:
    entities: dict[InstanceRef, str] = {}
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        expected = ["file", "pseudonym", "entity_id"]
        if reader.fieldnames != expected:
            raise ValueError(
                f"{path}: expected columns {','.join(expected)}, got "
                f"{reader.fieldnames}"
            )
        for row in reader:
            entities[(row["file"], row["pseudonym"])] = row["entity_id"]
    return GroundTruth(entities)


def write_predicted_pairs(
    pairs: Iterable[tuple[InstanceRef, InstanceRef]], path: str | Path
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["file_a", "pseudonym_a", "file_b", "pseudonym_b"])
        for (file_a, pseudo_a), (file_b, pseudo_b) in pairs:
            writer.writerow([file_a, pseudo_a, file_b, pseudo_b])


def read_predicted_pairs(
    path: str | Path,
) -> list[tuple[InstanceRef, InstanceRef]]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        expected = ["file_a", "pseudonym_a", "file_b", "pseudonym_b"]
        if reader.fieldnames is None or list(reader.fieldnames[:4]) != expected:
            raise ValueError(
                f"{path}: expected columns {','.join(expected)}, got "
                f"{reader.fieldnames}"
            )
        return [
            (
                (row["file_a"], row["pseudonym_a"]),
                (row["file_b"], row["pseudonym_b"]),
            )
            for row in reader
        ]

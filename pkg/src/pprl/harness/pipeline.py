"""In-process linkage pipeline and threshold sweeps.

The harness can link station files directly, without any services:
encode every file, compare all cross-file vector pairs, classify.  This
is both the reference the service stack is checked against and the
engine behind threshold sweeps, which need raw similarities rather than
a single cut-off.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from pprl.harness.evaluate import InstanceRef
from pprl.harness.generate import DatasetRecord, QID_FIELDS
from pprl.masking import (
    AttributeSpec,
    EncodingScheme,
    PersonRecord,
    allocate_hash_counts,
    encode,
    estimate_weights,
)
from pprl.matcher import VectorBlock, pairwise_similarities
from pprl.similarity import SweepRow, sweep

__all__ = [
    "SimilarityCorpus",
    "build_scheme",
    "cross_file_similarities",
    "default_thresholds",
    "encode_block",
    "link_files",
    "sweep_argmax",
    "write_sweep_csv",
]

HASH_BUDGET_PER_ATTRIBUTE = 10


def build_scheme(
    record_sets: Sequence[Sequence[DatasetRecord]],
    study_secret: str | bytes,
    q: int = 2,
    filter_bits: int = 1024,
    balanced: bool = True,
) -> EncodingScheme:
    """Derive a complete scheme from sample data and a study secret.

    Attribute weights are estimated from the supplied records; salts,
    hash secret and permutation seed are all derived deterministically
    from ``study_secret``, which stations share out of band.
    """
    if isinstance(study_secret, str):
        study_secret = study_secret.encode("utf-8")
    samples: dict[str, list[str]] = {name: [] for name in QID_FIELDS}
    for records in record_sets:
        for record in records:
            for name in QID_FIELDS:
                samples[name].append(record.attributes[name])
    weights = estimate_weights(samples, q)
    counts = allocate_hash_counts(
        weights, HASH_BUDGET_PER_ATTRIBUTE * len(weights)
    )
    attributes = tuple(
        AttributeSpec(
            name=name,
            weight=weights[name],
            hash_count=counts[name],
            salt=hashlib.sha256(
                b"attribute-salt:" + name.encode("utf-8") + study_secret
            ).digest(),
        )
        for name in QID_FIELDS
    )
    return EncodingScheme(
        filter_bits=filter_bits,
        q=q,
        attributes=attributes,
        hash_secret=hashlib.sha256(b"hash-secret:" + study_secret).digest(),
        permutation_seed=hashlib.sha256(
            b"permutation-seed:" + study_secret
        ).digest(),
        balanced=balanced,
    )


def encode_block(
    records: Sequence[DatasetRecord], scheme: EncodingScheme
) -> VectorBlock:
    return VectorBlock.from_vectors(
        [
            encode(
                PersonRecord(
                    pseudonym=record.pseudonym, attributes=record.attributes
                ),
                scheme,
            )
            for record in records
        ]
    )


def link_files(
    files: Mapping[str, Sequence[DatasetRecord]],
    scheme: EncodingScheme,
    threshold: float,
) -> tuple[list[tuple[InstanceRef, InstanceRef]], int]:
    """Encode and link station files directly.

    Returns the predicted cross-file instance pairs (inclusive
    threshold) and the number of comparisons performed.
    """
    labels = list(files)
    blocks = {label: encode_block(files[label], scheme) for label in labels}
    predicted: list[tuple[InstanceRef, InstanceRef]] = []
    total = 0
    for i, label_a in enumerate(labels):
        for label_b in labels[i + 1 :]:
            sims = pairwise_similarities(blocks[label_a], blocks[label_b])
            total += sims.size
            for row, col in np.argwhere(sims >= threshold):
                predicted.append(
                    (
                        (label_a, files[label_a][row].pseudonym),
                        (label_b, files[label_b][col].pseudonym),
                    )
                )
    return predicted, total


@dataclass(frozen=True)
class SimilarityCorpus:
    """All cross-file similarities of one experiment, with truth labels."""

    similarities: np.ndarray
    is_true: np.ndarray

    @property
    def total_comparisons(self) -> int:
        return int(self.similarities.size)

    def sweep(self, thresholds: Sequence[float]) -> list[SweepRow]:
        material = np.column_stack(
            [self.similarities, self.is_true.astype(np.float64)]
        )
        return sweep(material, thresholds)


def cross_file_similarities(
    files: Mapping[str, Sequence[DatasetRecord]], scheme: EncodingScheme
) -> SimilarityCorpus:
    labels = list(files)
    blocks = {label: encode_block(files[label], scheme) for label in labels}
    entities = {
        label: np.array([r.entity_id for r in files[label]])
        for label in labels
    }
    sim_parts = []
    truth_parts = []
    for i, label_a in enumerate(labels):
        for label_b in labels[i + 1 :]:
            sims = pairwise_similarities(blocks[label_a], blocks[label_b])
            truth = entities[label_a][:, None] == entities[label_b][None, :]
            sim_parts.append(sims.ravel())
            truth_parts.append(truth.ravel())
    return SimilarityCorpus(
        similarities=np.concatenate(sim_parts),
        is_true=np.concatenate(truth_parts),
    )


def default_thresholds() -> list[float]:
    """The standard sweep grid: 0.00 to 1.00 in steps of 0.01."""
    return [round(i / 100, 2) for i in range(101)]


def sweep_argmax(rows: Sequence[SweepRow]) -> SweepRow:
    """Row with the highest F1; ties resolve to the lowest threshold."""
    best = rows[0]
    for row in rows[1:]:
        if row.f1 > best.f1:
            best = row
    return best


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["threshold", "precision", "recall", "f1"])
        for row in rows:
            writer.writerow(
                [
                    f"{row.threshold:.2f}",
                    f"{row.precision:.6f}",
                    f"{row.recall:.6f}",
                    f"{row.f1:.6f}",
                ]
            )

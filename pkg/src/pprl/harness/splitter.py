"""Distributing generated records over station files."""

from __future__ import annotations

import random
from typing import Sequence

from pprl.harness.generate import DatasetRecord

__all__ = ["interleave_versions", "split_records"]


def split_records(
    records: Sequence[DatasetRecord],
    file_count: int,
    common_count: int,
    seed: int = 0,
) -> list[list[DatasetRecord]]:
    """Split records into files sharing ``common_count`` records.

    A random sample of ``common_count`` records is inserted into every
    file; each remaining record lands in exactly one file, chosen
    uniformly.  File sizes therefore sum to
    ``len(records) + (file_count - 1) * common_count``.
    """
    if file_count < 1:
        raise ValueError("file_count must be >= 1")
    if not 0 <= common_count <= len(records):
        raise ValueError(
            f"common_count {common_count} outside [0, {len(records)}]"
        )
    rng = random.Random(seed)
    common_indices = set(rng.sample(range(len(records)), common_count))
    common = [records[i] for i in sorted(common_indices)]
    files: list[list[DatasetRecord]] = [list(common) for _ in range(file_count)]
    for i, record in enumerate(records):
        if i in common_indices:
            continue
        files[rng.randrange(file_count)].append(record)
    return files


def interleave_versions(
    versions: Sequence[Sequence[DatasetRecord]], seed: int = 0
) -> list[list[DatasetRecord]]:
    """Shuffle aligned record versions so matches only exist across files.

    ``versions`` holds one sequence per copy (the original file plus its
    corrupted duplicates), aligned by position and entity.  For every
    entity the versions are dealt onto the output files by a fresh random
    permutation, so no two versions of an entity share a file and every
    output file keeps the input size.
    """
    if len(versions) < 2:
        raise ValueError("need at least two version files to interleave")
    size = len(versions[0])
    if any(len(v) != size for v in versions):
        raise ValueError("version files must have equal length")
    for row in range(size):
        entities = {v[row].entity_id for v in versions}
        if len(entities) != 1:
            raise ValueError(
                f"row {row}: version files disagree on the entity "
                f"({sorted(entities)})"
            )
    rng = random.Random(seed)
    files: list[list[DatasetRecord]] = [[] for _ in versions]
    order = list(range(len(versions)))
    for row in range(size):
        rng.shuffle(order)
        for version_index, file_index in enumerate(order):
            files[file_index].append(versions[version_index][row])
    for file_records in files:
        rng.shuffle(file_records)
    return files

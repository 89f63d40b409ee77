"""Pseudonym resolution against a master patient index.

The resolver only needs one capability from the surrounding
infrastructure: turning a pseudonym into the matching person record.
:class:`MpiAdapter` captures that; :class:`CsvMpiStore` is the bundled
file-backed implementation used for desk experiments and demos.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Protocol, runtime_checkable

from pprl.masking import PersonRecord

__all__ = ["CsvMpiStore", "MpiAdapter", "MpiFormatError"]

EXPECTED_COLUMNS = [
    "pseudonym",
    "first_name",
    "last_name",
    "gender",
    "birth_date",
    "city",
]


class MpiFormatError(ValueError):
    """Raised when an MPI store file is malformed."""


@runtime_checkable
class MpiAdapter(Protocol):
    def lookup(self, pseudonym: str) -> PersonRecord | None:
        """Return the record behind a pseudonym, or None if unknown."""
        ...


class CsvMpiStore:
    """In-memory MPI loaded from a CSV file.

    Expected header: ``pseudonym,first_name,last_name,gender,birth_date,city``.
    Duplicate pseudonyms and short rows are load-time errors that name the
    offending line.
    """

    def __init__(self, records: dict[str, PersonRecord]) -> None:
        self._records = records

    @classmethod
    def load(cls, path: str | Path) -> "CsvMpiStore":
        path = Path(path)
        records: dict[str, PersonRecord] = {}
        with path.open(newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            if reader.fieldnames != EXPECTED_COLUMNS:
                raise MpiFormatError(
                    f"{path}: expected header {','.join(EXPECTED_COLUMNS)}, "
                    f"got {reader.fieldnames}"
                )
            for line, row in enumerate(reader, start=2):
                if any(value is None for value in row.values()):
                    raise MpiFormatError(f"{path}, line {line}: short row")
                pseudonym = row["pseudonym"]
                if not pseudonym:
                    raise MpiFormatError(
                        f"{path}, line {line}: empty pseudonym"
                    )
                if pseudonym in records:
                    raise MpiFormatError(
                        f"{path}, line {line}: duplicate pseudonym "
                        f"{pseudonym!r}"
                    )
                records[pseudonym] = PersonRecord(
                    pseudonym=pseudonym,
                    attributes={
                        name: row[name] for name in EXPECTED_COLUMNS[1:]
                    },
                )
        return cls(records)

    def lookup(self, pseudonym: str) -> PersonRecord | None:
        return self._records.get(pseudonym)

    def __len__(self) -> int:
        return len(self._records)

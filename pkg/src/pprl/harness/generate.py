"""Synthetic personal records drawn from frequency tables.

Names and cities are sampled proportionally to their table counts,
birth dates uniformly from a date range, gender from a configurable
distribution.  Every generated record gets a fresh entity id and
pseudonym, and the quasi-identifier tuples are guaranteed unique so
exact-duplicate experiments have unambiguous ground truth.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from pprl.harness.tables import load_frequency_table

__all__ = ["DatasetRecord", "GeneratorConfig", "generate", "read_dataset", "write_dataset"]

QID_FIELDS = ["first_name", "last_name", "gender", "birth_date", "city"]
DATASET_COLUMNS = ["pseudonym", "entity_id"] + QID_FIELDS


@dataclass(frozen=True)
class DatasetRecord:
    """One harness-side record: handle, identity and quasi-identifiers."""

    pseudonym: str
    entity_id: str
    attributes: dict[str, str]


@dataclass(frozen=True)
class GeneratorConfig:
    record_count: int
    seed: int = 0
    first_names: str = "first_names.csv"
    surnames: str = "surnames.csv"
    cities: str = "cities.csv"
    birth_date_start: dt.date = dt.date(1940, 1, 1)
    birth_date_end: dt.date = dt.date(2005, 12, 31)
    genders: tuple[tuple[str, float], ...] = (("F", 0.5), ("M", 0.5))

    def __post_init__(self) -> None:
        if self.record_count < 1:
            raise ValueError("record_count must be >= 1")
        if self.birth_date_end < self.birth_date_start:
            raise ValueError("birth date range is empty")
        if not self.genders or any(w <= 0 for _, w in self.genders):
            raise ValueError("gender weights must be positive")

    @classmethod
    def from_file(cls, path: str | Path) -> "GeneratorConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        kwargs: dict = {"record_count": raw["record_count"]}
        for key in ("seed", "first_names", "surnames", "cities"):
            if key in raw:
                kwargs[key] = raw[key]
        if "birth_date_start" in raw:
            kwargs["birth_date_start"] = dt.date.fromisoformat(
                raw["birth_date_start"]
            )
        if "birth_date_end" in raw:
            kwargs["birth_date_end"] = dt.date.fromisoformat(
                raw["birth_date_end"]
            )
        if "genders" in raw:
            kwargs["genders"] = tuple(
                (value, float(weight)) for value, weight in raw["genders"].items()
            )
        return cls(**kwargs)


def generate(config: GeneratorConfig) -> list[DatasetRecord]:
    """Draw ``record_count`` records with unique quasi-identifier tuples."""
    first_names = load_frequency_table(config.first_names)
    surnames = load_frequency_table(config.surnames)
    cities = load_frequency_table(config.cities)
    day_count = (config.birth_date_end - config.birth_date_start).days + 1

    capacity = (
        len(first_names)
        * len(surnames)
        * len(cities)
        * len(config.genders)
        * day_count
    )
    if config.record_count > capacity:
        raise ValueError(
            f"cannot draw {config.record_count} unique records from "
            f"{capacity} possible quasi-identifier tuples"
        )

    rng = random.Random(config.seed)
    first_values, first_weights = zip(*first_names)
    sur_values, sur_weights = zip(*surnames)
    city_values, city_weights = zip(*cities)
    gender_values, gender_weights = zip(*config.genders)

    records: list[DatasetRecord] = []
    seen: set[tuple[str, ...]] = set()
    attempts = 0
    max_attempts = 1000 * config.record_count
    while len(records) < config.record_count:
        if attempts >= max_attempts:
            raise RuntimeError(
                f"gave up after {attempts} draws; table diversity too low "
                f"for {config.record_count} unique records"
            )
        attempts += 1
        birth = config.birth_date_start + dt.timedelta(
            days=rng.randrange(day_count)
        )
        tuple_ = (
            rng.choices(first_values, first_weights)[0],
            rng.choices(sur_values, sur_weights)[0],
            rng.choices(gender_values, gender_weights)[0],
            birth.isoformat(),
            rng.choices(city_values, city_weights)[0],
        )
        if tuple_ in seen:
            continue
        seen.add(tuple_)
        index = len(records) + 1
        records.append(
            DatasetRecord(
                pseudonym=f"P-{index:06d}",
                entity_id=f"E-{index:06d}",
                attributes=dict(zip(QID_FIELDS, tuple_)),
            )
        )
    return records


def write_dataset(records: Iterable[DatasetRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(DATASET_COLUMNS)
        for record in records:
            writer.writerow(
                [record.pseudonym, record.entity_id]
                + [record.attributes[name] for name in QID_FIELDS]
            )


def read_dataset(path: str | Path) -> list[DatasetRecord]:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != DATASET_COLUMNS:
            raise ValueError(
                f"{path}: expected columns {','.join(DATASET_COLUMNS)}, "
                f"got {reader.fieldnames}"
            )
        return [
            DatasetRecord(
                pseudonym=row["pseudonym"],
                entity_id=row["entity_id"],
                attributes={name: row[name] for name in QID_FIELDS},
            )
            for row in reader
        ]


def export_mpi(records: Sequence[DatasetRecord], path: str | Path) -> None:
    """Write the station-side MPI store view: no entity ids."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["pseudonym"] + QID_FIELDS)
        for record in records:
            writer.writerow(
                [record.pseudonym]
                + [record.attributes[name] for name in QID_FIELDS]
            )

"""Bundled frequency and corruption tables."""

from __future__ import annotations

import csv
from importlib import resources
from pathlib import Path

_DATA_PACKAGE = "pprl.harness.data"


def _open_bundled(name: str):
    return resources.files(_DATA_PACKAGE).joinpath(name).open(
        "r", encoding="utf-8", newline=""
    )


def load_frequency_table(source: str | Path) -> list[tuple[str, int]]:
    """Read a ``name,count`` CSV, bundled (bare name) or external (path)."""
    if isinstance(source, Path) or "/" in str(source):
        handle = Path(source).open("r", encoding="utf-8", newline="")
    else:
        handle = _open_bundled(str(source))
    with handle:
        reader = csv.DictReader(handle)
        rows = [(row["name"], int(row["count"])) for row in reader]
    if not rows:
        raise ValueError(f"frequency table {source} is empty")
    if any(count <= 0 for _, count in rows):
        raise ValueError(f"frequency table {source} has non-positive counts")
    return rows


def load_substitution_rules(name: str) -> list[tuple[str, str]]:
    """Read a bundled ``src,dst`` substitution table."""
    with _open_bundled(name) as handle:
        reader = csv.DictReader(handle)
        return [(row["src"], row["dst"]) for row in reader]


def load_keyboard_adjacency(name: str = "keyboard_qwertz.csv") -> dict[str, str]:
    """Read the bundled keyboard layout: key to string of neighbours."""
    with _open_bundled(name) as handle:
        reader = csv.DictReader(handle)
        return {row["key"]: row["neighbors"] for row in reader}

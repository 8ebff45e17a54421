"""Item metadata records and catalog files (CSV or JSON lines)."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from ..errors import FormatError, ValidationError

# canonical rendering order of the metadata fields, with their display labels
METADATA_FIELDS = (
    "title",
    "average_rating",
    "genres",
    "directors",
    "overview",
    "cast",
    "runtime_minutes",
    "num_ratings",
    "year",
    "languages",
)
FIELD_LABELS = {
    "title": "Title",
    "average_rating": "Average rating",
    "genres": "Genres",
    "directors": "Directors",
    "overview": "Overview",
    "cast": "Cast",
    "runtime_minutes": "Runtime",
    "num_ratings": "Number ratings",
    "year": "Year",
    "languages": "Languages",
}
_LIST_FIELDS = {"genres", "directors", "cast", "languages"}
_INT_FIELDS = {"runtime_minutes", "num_ratings", "year"}
_LIST_SEP = "|"


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    title: str
    average_rating: Optional[float] = None
    genres: tuple = ()
    directors: tuple = ()
    overview: str = ""
    cast: tuple = ()
    runtime_minutes: Optional[int] = None
    num_ratings: Optional[int] = None
    year: Optional[int] = None
    languages: tuple = ()

    def __post_init__(self):
        if not str(self.item_id):
            raise ValidationError("item_id must be non-empty")
        if not self.title:
            raise ValidationError(f"item {self.item_id}: title must be non-empty")
        for name in _LIST_FIELDS:
            value = getattr(self, name)
            if isinstance(value, str):
                value = tuple(v for v in value.split(_LIST_SEP) if v)
            object.__setattr__(self, name, tuple(value))
        object.__setattr__(self, "item_id", str(self.item_id))

    def field_text(self, name: str) -> Optional[str]:
        """Render one metadata field as text, or ``None`` when it is empty."""
        if name not in FIELD_LABELS:
            raise KeyError(f"unknown metadata field {name!r}")
        value = getattr(self, name)
        if value is None or value == "" or value == ():
            return None
        if name in _LIST_FIELDS:
            return ", ".join(value)
        if name == "average_rating":
            return f"{value:.2f}"
        if name == "runtime_minutes":
            return f"{value} min"
        return str(value)

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in _LIST_FIELDS:
            d[name] = list(d[name])
        return d


def _coerce(name, raw):
    if raw is None or raw == "":
        if name in _LIST_FIELDS:
            return ()
        return "" if name == "overview" else None
    if name in _INT_FIELDS:
        return int(raw)
    if name == "average_rating":
        return float(raw)
    return raw


def _record(row: dict, where: str) -> ItemRecord:
    if "item_id" not in row or "title" not in row:
        raise FormatError(f"{where}: item record needs item_id and title")
    kwargs = {"item_id": str(row["item_id"]), "title": row["title"]}
    for name in METADATA_FIELDS[1:]:
        if name in row:
            try:
                kwargs[name] = _coerce(name, row[name])
            except ValueError as exc:
                raise ValidationError(f"{where}: field {name}: {exc}") from None
    return ItemRecord(**kwargs)


def load_catalog(path) -> dict[str, ItemRecord]:
    """Load item metadata keyed by item id.

    ``.jsonl``/``.json`` files hold one JSON object per line; anything else is
    read as CSV with a header, list fields separated by ``|``.
    """
    path = Path(path)
    catalog: dict[str, ItemRecord] = {}
    if path.suffix in (".jsonl", ".json"):
        with path.open(encoding="utf-8") as fh:
            rows = [(n, json.loads(line)) for n, line in enumerate(fh, start=1) if line.strip()]
    else:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(enumerate(csv.DictReader(fh), start=2))
    for lineno, row in rows:
        rec = _record(row, f"{path}:{lineno}")
        if rec.item_id in catalog:
            raise ValidationError(f"duplicate item_id {rec.item_id}", line=lineno)
        catalog[rec.item_id] = rec
    return catalog


def write_catalog(catalog, path) -> None:
    path = Path(path)
    records = [catalog[k] for k in sorted(catalog)]
    if path.suffix in (".jsonl", ".json"):
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        return
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["item_id", *METADATA_FIELDS], lineterminator="\n")
        writer.writeheader()
        for rec in records:
            row = rec.to_dict()
            for name in _LIST_FIELDS:
                row[name] = _LIST_SEP.join(row[name])
            writer.writerow({k: "" if v is None else v for k, v in row.items()})

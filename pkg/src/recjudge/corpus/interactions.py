"""Interaction logs: loading, filtering and user sampling."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np
import pandas as pd

from ..errors import FormatError, ValidationError

_log = logging.getLogger(__name__)

COLUMNS = ["user_id", "item_id", "rating", "timestamp"]
MIN_RATING, MAX_RATING = 0.5, 5.0

# MovieLens ships camelCase headers
_HEADER_ALIASES = {
    "userid": "user_id",
    "user": "user_id",
    "movieid": "item_id",
    "itemid": "item_id",
    "item": "item_id",
    "rating": "rating",
    "timestamp": "timestamp",
}


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    rating: Optional[float] = None
    timestamp: Optional[int] = None

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise ValidationError("user_id and item_id must be non-empty")
        if self.timestamp is not None and self.timestamp < 0:
            raise ValidationError(f"negative timestamp {self.timestamp}")


class InteractionLog:
    """An immutable table of user-item interactions.

    Backed by a :class:`pandas.DataFrame` with columns ``user_id`` and
    ``item_id`` (strings), ``rating`` (float, NaN when absent) and
    ``timestamp`` (nullable Int64).  ``report`` carries diagnostics from the
    operation that produced the log (skipped lines, before/after counts).
    """

    def __init__(self, frame: Optional[pd.DataFrame] = None, report: Optional[dict] = None):
        if frame is None:
            frame = pd.DataFrame({c: [] for c in COLUMNS})
        frame = frame.reindex(columns=COLUMNS)
        self._df = pd.DataFrame(
            {
                "user_id": frame["user_id"].astype(str).to_numpy(),
                "item_id": frame["item_id"].astype(str).to_numpy(),
                "rating": pd.to_numeric(frame["rating"]).astype("float64").to_numpy(),
                "timestamp": pd.array(frame["timestamp"], dtype="Int64"),
            }
        )
        self.report = dict(report or {})

    @classmethod
    def from_records(cls, records: Iterable, report: Optional[dict] = None) -> "InteractionLog":
        rows = []
        for rec in records:
            if not isinstance(rec, Interaction):
                rec = Interaction(*rec)
            rows.append((rec.user_id, rec.item_id, rec.rating, rec.timestamp))
        frame = pd.DataFrame(rows, columns=COLUMNS)
        frame["rating"] = frame["rating"].astype("float64")
        return cls(frame, report)

    @property
    def frame(self) -> pd.DataFrame:
        """A copy of the underlying table."""
        return self._df.copy()

    def __len__(self):
        return len(self._df)

    def __iter__(self) -> Iterator[Interaction]:
        for u, i, r, t in self._df.itertuples(index=False, name=None):
            yield Interaction(
                u, i, None if pd.isna(r) else float(r), None if pd.isna(t) else int(t)
            )

    def __eq__(self, other):
        if not isinstance(other, InteractionLog):
            return NotImplemented
        key = ["user_id", "item_id", "timestamp", "rating"]
        a = self._df.sort_values(key, na_position="first").reset_index(drop=True)
        b = other._df.sort_values(key, na_position="first").reset_index(drop=True)
        return a.equals(b)

    def __repr__(self):
        return f"InteractionLog({len(self)} interactions, {self.n_users} users, {self.n_items} items)"

    @property
    def n_users(self) -> int:
        return int(self._df["user_id"].nunique())

    @property
    def n_items(self) -> int:
        return int(self._df["item_id"].nunique())

    def users(self) -> list:
        return sorted(self._df["user_id"].unique())

    def items(self) -> list:
        return sorted(self._df["item_id"].unique())

    def has_timestamps(self) -> bool:
        return bool(self._df["timestamp"].notna().all())

    def for_user(self, user_id) -> "InteractionLog":
        return InteractionLog(self._df[self._df["user_id"] == str(user_id)])

    def by_user(self) -> dict:
        """Map user id to the list of item ids, in log order."""
        return {u: list(g) for u, g in self._df.groupby("user_id", sort=True)["item_id"]}

    def item_counts(self) -> pd.Series:
        return self._df["item_id"].value_counts()

    def concat(self, other: "InteractionLog") -> "InteractionLog":
        return InteractionLog(pd.concat([self._df, other._df], ignore_index=True))

    def to_csv(self, path, sep=","):
        """Write with a ``user_id,item_id,rating,timestamp`` header."""
        out = self._df.copy()
        out["rating"] = out["rating"].map(lambda r: "" if pd.isna(r) else repr(float(r)))
        out.to_csv(path, sep=sep, index=False, lineterminator="\n")


def _parse_row(fields, header_index):
    user = fields[header_index["user_id"]].strip()
    item = fields[header_index["item_id"]].strip()
    rating = None
    if "rating" in header_index:
        raw = fields[header_index["rating"]].strip()
        if raw:
            rating = float(raw)
            if not (MIN_RATING <= rating <= MAX_RATING) or math.isnan(rating):
                raise ValueError(f"rating {raw} outside [{MIN_RATING}, {MAX_RATING}]")
    ts = None
    if "timestamp" in header_index:
        raw = fields[header_index["timestamp"]].strip()
        if raw:
            ts = int(raw)
    return Interaction(user, item, rating, ts)


def load_interactions(path, format: str = "csv_movielens") -> InteractionLog:
    """Read an interaction file with a header row.

    ``format`` is ``csv_movielens`` (comma separated) or ``tsv``.  Lines with
    the wrong field count or unparseable values are skipped; the number
    skipped is stored in ``log.report["skipped"]``.
    """
    if format not in ("csv_movielens", "tsv"):
        raise ValueError(f"unknown interaction format {format!r}")
    delimiter = "," if format == "csv_movielens" else "\t"
    path = Path(path)
    fh = path.open(newline="", encoding="utf-8")
    records, skipped = [], 0
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file, expected a header row") from None
        names = [_HEADER_ALIASES.get(h.strip().lower().replace("_", ""), h.strip().lower()) for h in header]
        header_index = {n: k for k, n in enumerate(names) if n in COLUMNS}
        missing = {"user_id", "item_id"} - header_index.keys()
        if missing:
            raise FormatError(f"{path}: missing mandatory column(s) {sorted(missing)}")
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != len(header):
                skipped += 1
                _log.debug("%s:%d: expected %d fields", path, lineno, len(header))
                continue
            try:
                records.append(_parse_row(fields, header_index))
            except (ValueError, ValidationError) as exc:
                skipped += 1
                _log.debug("%s:%d: %s", path, lineno, exc)
    if skipped:
        _log.warning("%s: skipped %d malformed line(s)", path, skipped)
    return InteractionLog.from_records(records, report={"skipped": skipped, "source": str(path)})


def filter_min_interactions(log: InteractionLog, min_count: int) -> InteractionLog:
    """Drop items, then users, with fewer than ``min_count`` interactions.

    This is a single ordered pass, not an iterated k-core: an item that falls
    below the threshold because of the user pass is kept.
    """
    if min_count < 0:
        raise ValidationError("min_count must be >= 0")
    df = log.frame
    before = {"interactions": len(df), "users": df["user_id"].nunique(), "items": df["item_id"].nunique()}
    if min_count > 0:
        icount = df.groupby("item_id")["item_id"].transform("size")
        df = df[icount >= min_count]
        ucount = df.groupby("user_id")["user_id"].transform("size")
        df = df[ucount >= min_count]
    after = {"interactions": len(df), "users": df["user_id"].nunique(), "items": df["item_id"].nunique()}
    _log.info("min-interaction filter (%d): %s -> %s", min_count, before, after)
    return InteractionLog(df, report={"before": before, "after": after, "min_count": min_count})


def sample_users(log: InteractionLog, n: int, seed: int, keep=()) -> InteractionLog:
    """Uniformly sample ``n`` users (without replacement) and keep their rows.

    Users listed in ``keep`` are always retained in addition to the sample.
    """
    users = np.array(log.users(), dtype=object)
    rng = np.random.default_rng(seed)
    n = min(n, len(users))
    chosen = set(rng.choice(users, size=n, replace=False).tolist()) | {str(u) for u in keep}
    df = log.frame
    return InteractionLog(df[df["user_id"].isin(chosen)], report={"sampled_users": len(chosen), "seed": seed})

"""TREC-style qrels and run files, and their in-memory carriers."""

from __future__ import annotations

import logging
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional

from ..errors import FormatError, ValidationError

_log = logging.getLogger(__name__)

DEFAULT_MAX_GRADE = 7


class Qrels:
    """Graded relevance judgments, ``(user_id, item_id) -> grade``.

    Stored as a nested mapping ``user -> {item: grade}``.  Grades are
    integers in ``[0, max_grade]``; the bound defaults to the 0-7 interest
    scale and can be raised for raw criterion sums or other scales.
    """

    def __init__(self, entries=None, max_grade: int = DEFAULT_MAX_GRADE):
        self.max_grade = max_grade
        self._data: dict[str, dict[str, int]] = {}
        if entries is None:
            return
        if isinstance(entries, Qrels):
            entries = entries.pairs()
        elif isinstance(entries, Mapping):
            entries = entries.items()
        for key, grade in entries:
            user, item = key
            self._set(str(user), str(item), grade)

    def _set(self, user, item, grade):
        if isinstance(grade, bool) or int(grade) != grade:
            raise ValidationError(f"grade {grade!r} for ({user}, {item}) is not an integer")
        grade = int(grade)
        if not 0 <= grade <= self.max_grade:
            raise ValidationError(f"grade {grade} for ({user}, {item}) outside [0, {self.max_grade}]")
        self._data.setdefault(user, {})[item] = grade

    @classmethod
    def from_nested(cls, nested: Mapping, max_grade: int = DEFAULT_MAX_GRADE) -> "Qrels":
        q = cls(max_grade=max_grade)
        for user, items in nested.items():
            for item, grade in items.items():
                q._set(str(user), str(item), grade)
        return q

    def grade(self, user, item, default=None):
        return self._data.get(str(user), {}).get(str(item), default)

    def __getitem__(self, key):
        user, item = key
        try:
            return self._data[str(user)][str(item)]
        except KeyError:
            raise KeyError(key) from None

    def __contains__(self, key):
        user, item = key
        return str(item) in self._data.get(str(user), {})

    def __len__(self):
        return sum(len(v) for v in self._data.values())

    def __iter__(self) -> Iterator[tuple]:
        """Yield ``(user, item, grade)`` sorted by user then item."""
        for user in sorted(self._data):
            items = self._data[user]
            for item in sorted(items):
                yield user, item, items[item]

    def __eq__(self, other):
        if not isinstance(other, Qrels):
            return NotImplemented
        return self._data == other._data

    def __repr__(self):
        return f"Qrels({len(self)} judgments, {len(self._data)} users)"

    def pairs(self) -> Iterator[tuple]:
        """Yield ``((user, item), grade)``."""
        for user, item, grade in self:
            yield (user, item), grade

    def users(self) -> list:
        return sorted(self._data)

    def for_user(self, user) -> dict:
        """The ``{item: grade}`` map of one user (a copy; empty when unknown)."""
        return dict(self._data.get(str(user), {}))

    def relevant(self, user) -> dict:
        return {i: g for i, g in self._data.get(str(user), {}).items() if g > 0}

    def restrict(self, keep) -> "Qrels":
        """Judgments whose ``(user, item)`` key is in ``keep``."""
        keep = {(str(u), str(i)) for u, i in keep}
        return Qrels(((k, g) for k, g in self.pairs() if k in keep), max_grade=self.max_grade)

    def to_nested(self) -> dict:
        return {u: dict(items) for u, items in self._data.items()}


class RunSet:
    """Ranked recommendation lists of one system.

    ``rankings`` maps each user to a list of ``(item_id, score)`` in rank
    order (rank 1 first).
    """

    def __init__(self, system_tag: str, rankings: Optional[Mapping] = None, *, validate: bool = True):
        self.system_tag = system_tag
        self.rankings: dict[str, list[tuple[str, float]]] = {}
        self.violations: list[str] = []
        for user, ranked in (rankings or {}).items():
            ranked = [(str(i), float(s)) for i, s in ranked]
            self.rankings[str(user)] = ranked
            if validate:
                self._check(str(user), ranked)

    def _check(self, user, ranked):
        seen = set()
        for item, _ in ranked:
            if item in seen:
                raise ValidationError(f"duplicate item {item} for user {user} in run {self.system_tag}")
            seen.add(item)
        for r, ((_, s0), (item, s1)) in enumerate(zip(ranked, ranked[1:]), start=2):
            if s1 > s0:
                self.violations.append(f"user {user}: score of {item} at rank {r} exceeds rank {r - 1}")

    @classmethod
    def from_scores(cls, system_tag: str, scores: Mapping, k: Optional[int] = None) -> "RunSet":
        """Build a run from ``user -> {item: score}``, sorting by descending
        score (ties by item id) and truncating to ``k``."""
        rankings = {}
        for user, item_scores in scores.items():
            ranked = sorted(item_scores.items(), key=lambda kv: (-kv[1], kv[0]))
            rankings[user] = ranked[:k] if k is not None else ranked
        return cls(system_tag, rankings)

    def users(self) -> list:
        return sorted(self.rankings)

    def items(self, user, k: Optional[int] = None) -> list:
        ranked = self.rankings.get(str(user), [])
        if k is not None:
            ranked = ranked[:k]
        return [item for item, _ in ranked]

    def __len__(self):
        return len(self.rankings)

    def __eq__(self, other):
        if not isinstance(other, RunSet):
            return NotImplemented
        return self.system_tag == other.system_tag and self.rankings == other.rankings

    def __repr__(self):
        return f"RunSet({self.system_tag!r}, {len(self)} users)"


def _lines(path) -> Iterable[tuple[int, list[str]]]:
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if fields:
                yield lineno, fields


def read_qrels(path, max_grade: int = DEFAULT_MAX_GRADE) -> Qrels:
    """Parse a four-column qrels file: ``user 0 item grade``."""
    qrels = Qrels(max_grade=max_grade)
    for lineno, fields in _lines(path):
        if len(fields) != 4:
            raise FormatError(f"{path}: line {lineno}: expected 4 columns, got {len(fields)}")
        user, _iteration, item, raw = fields
        try:
            grade = int(raw)
        except ValueError:
            raise ValidationError(f"grade {raw!r} is not an integer", line=lineno) from None
        if not 0 <= grade <= max_grade:
            raise ValidationError(f"grade {grade} outside [0, {max_grade}]", line=lineno)
        if (user, item) in qrels:
            raise ValidationError(f"duplicate judgment for ({user}, {item})", line=lineno)
        qrels._set(user, item, grade)
    return qrels


def write_qrels(qrels: Qrels, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for user, item, grade in qrels:
            fh.write(f"{user} 0 {item} {grade}\n")


def read_run(path) -> RunSet:
    """Parse a six-column run file: ``user Q0 item rank score tag``.

    Ranks must be contiguous from 1 for every user and items unique.  Score
    inversions against rank order are recorded in ``run.violations``.
    """
    by_user: dict[str, dict[int, tuple[str, float]]] = defaultdict(dict)
    seen: dict[str, set] = defaultdict(set)
    tags = set()
    for lineno, fields in _lines(path):
        if len(fields) != 6:
            raise FormatError(f"{path}: line {lineno}: expected 6 columns, got {len(fields)}")
        user, _q0, item, rank, score, tag = fields
        try:
            rank_i, score_f = int(rank), float(score)
        except ValueError:
            raise ValidationError(f"bad rank/score {rank!r} {score!r}", line=lineno) from None
        if rank_i in by_user[user]:
            raise ValidationError(f"duplicate rank {rank_i} for user {user}", line=lineno)
        if item in seen[user]:
            raise ValidationError(f"duplicate item {item} for user {user}", line=lineno)
        seen[user].add(item)
        by_user[user][rank_i] = (item, score_f)
        tags.add(tag)
    if len(tags) > 1:
        raise ValidationError(f"{path}: run mixes system tags {sorted(tags)}")
    rankings = {}
    for user, ranked in by_user.items():
        ranks = sorted(ranked)
        if ranks != list(range(1, len(ranks) + 1)):
            raise ValidationError(f"{path}: ranks for user {user} are not contiguous from 1: {ranks}")
        rankings[user] = [ranked[r] for r in ranks]
    run = RunSet(tags.pop() if tags else Path(path).stem, rankings)
    for msg in run.violations:
        _log.warning("%s: %s", path, msg)
    return run


def write_run(run: RunSet, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for user in run.users():
            for rank, (item, score) in enumerate(run.rankings[user], start=1):
                fh.write(f"{user} Q0 {item} {rank} {score!r} {run.system_tag}\n")

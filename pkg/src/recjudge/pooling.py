"""Depth-k judgment pools and thinned (sampled) qrels."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .corpus.trec import Qrels, RunSet
from .errors import ValidationError
from .metrics import MetricResult, judged_at_k

_log = logging.getLogger(__name__)


@dataclass
class Pool:
    """Items to be judged, per user, with the runs that contributed them."""

    assignments: dict = field(default_factory=dict)
    depth: int = 0
    contributing_systems: list = field(default_factory=list)

    def __contains__(self, key):
        user, item = key
        return str(item) in self.assignments.get(str(user), ())

    def __len__(self):
        return sum(len(v) for v in self.assignments.values())

    def users(self) -> list:
        return sorted(self.assignments)

    def pairs(self) -> list[tuple[str, str]]:
        return [(u, i) for u in sorted(self.assignments) for i in sorted(self.assignments[u])]

    def write(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for user, item in self.pairs():
                fh.write(f"{user} {item}\n")

    @classmethod
    def read(cls, path) -> "Pool":
        assignments: dict[str, set] = {}
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                fields = line.split()
                if not fields:
                    continue
                if len(fields) != 2:
                    raise ValidationError(f"expected 'user item', got {len(fields)} columns", line=lineno)
                assignments.setdefault(fields[0], set()).add(fields[1])
        return cls(assignments)


def build_pool(runs: Iterable[RunSet], depth: int) -> Pool:
    """Union of every run's top-``depth`` items, per user."""
    runs = list(runs)
    if depth < 1:
        raise ValidationError("pool depth must be >= 1")
    if not runs:
        raise ValidationError("cannot pool zero runs")
    assignments: dict[str, set] = {}
    for run in runs:
        for user in run.users():
            top = run.items(user, depth)
            if top:
                assignments.setdefault(user, set()).update(top)
            else:
                _log.info("run %s has no items for user %s", run.system_tag, user)
    return Pool(assignments, depth, sorted(r.system_tag for r in runs))


def _user_seed(seed: int, user: str) -> int:
    digest = hashlib.sha256(f"{seed}\x1f{user}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def sample_qrels(qrels: Qrels, per_user: int, seed: int) -> Qrels:
    """Keep a uniform random subset of ``min(per_user, available)`` judgments
    per user.  The draw for a user depends only on ``(seed, user)``."""
    if per_user < 1:
        raise ValidationError("per_user must be >= 1")
    entries = []
    for user in qrels.users():
        judged = qrels.for_user(user)
        items = sorted(judged)
        if len(items) > per_user:
            rng = np.random.default_rng(_user_seed(seed, user))
            items = sorted(rng.choice(items, size=per_user, replace=False).tolist())
        entries.extend(((user, i), judged[i]) for i in items)
    return Qrels(entries, max_grade=qrels.max_grade)


def coverage_report(pool: Pool, run: RunSet, k: int) -> MetricResult:
    """Per-user fraction of the run's top-k that lies inside the pool."""
    result = judged_at_k(run, pool, k)
    result.metric_name = f"pool_coverage@{k}"
    result.params["pool_depth"] = pool.depth
    return result


def write_coverage_csv(results: Iterable[tuple[str, MetricResult]], path) -> None:
    """One row per system: ``system,k,coverage,n_users``."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["system", "k", "coverage", "n_users"])
        for system, res in results:
            writer.writerow([system, res.params["k"], repr(res.aggregate), res.n_users])

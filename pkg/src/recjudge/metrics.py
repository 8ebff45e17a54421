"""Evaluation statistics: Judged@k, RBO, Compatibility, Kendall's tau
variants and pairwise judge/human agreement.

Compatibility is the best normalized RBO between a system ranking and any
ideal ranking consistent with the graded judgments.  Ideal rankings differ
only in how equal-grade items are ordered, and every ideal has the same
self-RBO, so maximizing means maximizing the prefix overlaps with the run.
Placing the equal-grade items that the run retrieves earlier first gives,
for every depth ``d``, the largest possible ``|S[:d] & I[:d]|``: any other
order can be transformed into it by swaps that never lower an overlap.
The greedy tie-break below therefore attains the maximum without search.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .corpus.trec import Qrels, RunSet
from .errors import NoPairsError, ValidationError

_log = logging.getLogger(__name__)

Ranking = Union[Sequence, Mapping]


@dataclass
class MetricResult:
    metric_name: str
    per_user: dict
    params: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def aggregate(self) -> float:
        if not self.per_user:
            return 0.0
        return math.fsum(self.per_user[u] for u in sorted(self.per_user)) / len(self.per_user)

    @property
    def n_users(self) -> int:
        return len(self.per_user)

    def summary(self) -> dict:
        return {
            "metric": self.metric_name,
            "params": self.params,
            "aggregate": self.aggregate,
            "n_users": self.n_users,
        }

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["user_id", "value"])
            for user in sorted(self.per_user):
                writer.writerow([user, repr(float(self.per_user[user]))])

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class AgreementTriple:
    agreement: float
    tie: float
    disagreement: float
    pair_count: int

    def as_tuple(self) -> tuple:
        return (self.agreement, self.tie, self.disagreement)


@dataclass(frozen=True)
class PairFilter:
    """Which human-labelled pairs take part in an agreement computation.

    ``relevant_vs_nonrelevant`` keeps pairs where exactly one human grade is
    0; ``min_grade_gap`` keeps pairs whose human grades differ by at least
    ``gap``.
    """

    mode: str = "relevant_vs_nonrelevant"
    gap: int = 1

    def __post_init__(self):
        if self.mode not in ("relevant_vs_nonrelevant", "min_grade_gap"):
            raise ValidationError(f"unknown pair filter mode {self.mode!r}")
        if self.mode == "min_grade_gap" and self.gap < 1:
            raise ValidationError("gap must be >= 1")

    def mask(self, hi: np.ndarray, hj: np.ndarray) -> np.ndarray:
        if self.mode == "relevant_vs_nonrelevant":
            return (hi == 0) != (hj == 0)
        return np.abs(hi - hj) >= self.gap


def judged_at_k(run: RunSet, qrels, k: int) -> MetricResult:
    """Fraction of each user's top-k that carries any judgment (grade 0 included).

    ``qrels`` may be anything supporting ``(user, item) in qrels``, such as
    a :class:`~recjudge.pooling.Pool`.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    if len(run) == 0:
        raise ValidationError(f"run {run.system_tag!r} is empty")
    per_user, empty = {}, []
    for user in run.users():
        top = run.items(user, k)
        if not top:
            empty.append(user)
            continue
        per_user[user] = sum((user, item) in qrels for item in top) / len(top)
    diagnostics = {"empty_users": empty}
    if hasattr(qrels, "users"):
        diagnostics["users_not_in_run"] = sorted(set(qrels.users()) - set(run.rankings))
    return MetricResult(f"judged@{k}", per_user, {"k": k}, diagnostics)


def _check_unique(seq, what):
    if len(set(seq)) != len(seq):
        raise ValidationError(f"{what} ranking contains duplicate items")


def rbo(system: Sequence, ideal: Sequence, p: float, depth: int) -> float:
    """Truncated rank-biased overlap of two rankings down to ``depth``.

    ``(1 - p) * sum_{d=1..depth} p**(d-1) * |S[:d] & I[:d]| / d``; no
    extrapolation beyond ``depth``.

    >>> rbo(["a"], ["a"], 0.5, 2)
    0.625
    """
    if not 0.0 < p < 1.0:
        raise ValidationError(f"p={p} outside (0, 1)")
    if depth < 1:
        raise ValidationError("depth must be >= 1")
    _check_unique(system, "system")
    _check_unique(ideal, "ideal")
    seen_s, seen_i = set(), set()
    overlap, total, weight = 0, 0.0, 1.0
    for d in range(1, depth + 1):
        if d <= len(system):
            s = system[d - 1]
            seen_s.add(s)
            overlap += s in seen_i
        if d <= len(ideal):
            i = ideal[d - 1]
            seen_i.add(i)
            overlap += i in seen_s
        total += weight * overlap / d
        weight *= p
    return (1.0 - p) * total


def ideal_ranking(system: Sequence, grades: Mapping) -> list:
    """Relevant items by descending grade, equal grades in system-rank order,
    unretrieved items last (by item id)."""
    position = {item: r for r, item in enumerate(system)}
    unretrieved = len(system)
    relevant = [item for item, g in grades.items() if g > 0]
    return sorted(relevant, key=lambda it: (-grades[it], position.get(it, unretrieved), str(it)))


def compatibility(
    run: RunSet, qrels: Qrels, p: float = 0.95, depth: Optional[int] = None, users=None
) -> MetricResult:
    """Per-user Compatibility of ``run`` against graded ``qrels``.

    ``depth`` defaults to each user's list length.  Unjudged items count as
    non-relevant.  Users without relevant items score 0 and are listed in
    ``diagnostics["no_relevant"]``.  ``users`` fixes the evaluated user set;
    users the run does not cover then score 0.
    """
    if not 0.0 < p < 1.0:
        raise ValidationError(f"p={p} outside (0, 1)")
    per_user, no_relevant = {}, []
    for user in (run.users() if users is None else sorted(map(str, users))):
        system = run.items(user)
        grades = qrels.relevant(user)
        ideal = ideal_ranking(system, grades)
        d = depth if depth is not None else len(system)
        if not ideal or d < 1:
            if not ideal:
                no_relevant.append(user)
            per_user[user] = 0.0
            continue
        per_user[user] = rbo(system, ideal, p, d) / rbo(ideal, ideal, p, d)
    if no_relevant:
        _log.debug("%s: %d user(s) without relevant items", run.system_tag, len(no_relevant))
    return MetricResult(
        "compatibility",
        per_user,
        {"p": p, "depth": depth if depth is not None else "run_length"},
        {"no_relevant": no_relevant},
    )


def _paired_scores(ranking_a: Ranking, ranking_b: Ranking) -> tuple[list, np.ndarray, np.ndarray]:
    def as_scores(r):
        if isinstance(r, Mapping):
            return {k: float(v) for k, v in r.items()}
        r = list(r)
        _check_unique(r, "input")
        # earlier position == better == higher score
        return {elem: float(-pos) for pos, elem in enumerate(r)}

    a, b = as_scores(ranking_a), as_scores(ranking_b)
    if a.keys() != b.keys():
        raise ValidationError(f"rankings cover different elements: {sorted(map(str, a.keys() ^ b.keys()))}")
    if len(a) < 2:
        raise ValidationError("rank correlation needs at least two elements")
    keys = sorted(a, key=str)
    return keys, np.array([a[k] for k in keys]), np.array([b[k] for k in keys])


def _pair_signs(x: np.ndarray) -> np.ndarray:
    i, j = np.triu_indices(len(x), k=1)
    return np.sign(x[i] - x[j])


def kendall_tau(ranking_a: Ranking, ranking_b: Ranking, variant: str = "b") -> float:
    """Kendall's tau between two rankings of the same elements.

    Each argument is either a sequence (best first) or a mapping from element
    to score (higher is better).  ``variant="b"`` adjusts for ties,
    ``variant="a"`` does not.  Returns NaN when either side is all ties.
    """
    _, x, y = _paired_scores(ranking_a, ranking_b)
    sx, sy = _pair_signs(x), _pair_signs(y)
    prod = sx * sy
    nc, nd = int((prod > 0).sum()), int((prod < 0).sum())
    n0 = len(prod)
    if variant == "a":
        return (nc - nd) / n0
    if variant != "b":
        raise ValueError(f"unknown tau variant {variant!r}")
    n1, n2 = int((sx == 0).sum()), int((sy == 0).sum())
    denom = math.sqrt((n0 - n1) * (n0 - n2))
    return (nc - nd) / denom if denom else math.nan


def _weighted_tau_one_side(x, y, weight_by_x: bool) -> float:
    n = len(x)
    # ranks by decreasing primary score, ties by decreasing secondary score
    primary, secondary = (x, y) if weight_by_x else (y, x)
    order = np.lexsort((-secondary, -primary))
    rank = np.empty(n, dtype=float)
    rank[order] = np.arange(n)
    i, j = np.triu_indices(n, k=1)
    w = 1.0 / (rank[i] + 1.0) + 1.0 / (rank[j] + 1.0)
    sx, sy = np.sign(x[i] - x[j]), np.sign(y[i] - y[j])
    num = float(np.sum(w * sx * sy))
    denom = math.sqrt(float(np.sum(w * (sx != 0))) * float(np.sum(w * (sy != 0))))
    return num / denom if denom else math.nan


def weighted_kendall_tau(ranking_a: Ranking, ranking_b: Ranking) -> float:
    """Top-weighted Kendall's tau with additive hyperbolic weights.

    A pair at 0-based ranks ``r_i, r_j`` weighs ``1/(r_i+1) + 1/(r_j+1)``.
    The statistic is computed once with ranks taken from each input and the
    two values are averaged, so disagreements near the top cost more than
    ones near the bottom.
    """
    _, x, y = _paired_scores(ranking_a, ranking_b)
    return 0.5 * (_weighted_tau_one_side(x, y, True) + _weighted_tau_one_side(x, y, False))


def _user_pair_counts(h: np.ndarray, j: np.ndarray, pair_filter: PairFilter) -> tuple[int, int, int]:
    a, b = np.triu_indices(len(h), k=1)
    keep = pair_filter.mask(h[a], h[b])
    a, b = a[keep], b[keep]
    human = np.sign(h[a] - h[b])
    judge = np.sign(j[a] - j[b])
    tie = judge == 0
    agree = (human * judge) > 0
    return int(agree.sum()), int(tie.sum()), int(len(a) - agree.sum() - tie.sum())


def agreement_triple(
    human: Qrels, judged: Qrels, pair_filter: Optional[PairFilter] = None, macro: bool = False
) -> AgreementTriple:
    """Proportions of judge/human agreement, ties and disagreement over item pairs.

    Pairs are formed within each user over items judged by both sides and
    filtered on the human grades.  By default counts are pooled across users;
    ``macro=True`` averages per-user proportions instead.
    """
    pair_filter = pair_filter or PairFilter()
    totals = np.zeros(3)
    per_user = []
    for user in human.users():
        h_items = human.for_user(user)
        j_items = judged.for_user(user)
        common = sorted(h_items.keys() & j_items.keys())
        if len(common) < 2:
            continue
        h = np.array([h_items[i] for i in common], dtype=float)
        j = np.array([j_items[i] for i in common], dtype=float)
        counts = np.array(_user_pair_counts(h, j, pair_filter), dtype=float)
        if counts.sum() == 0:
            continue
        totals += counts
        per_user.append(counts / counts.sum())
    n_pairs = int(totals.sum())
    if n_pairs == 0:
        raise NoPairsError(f"no item pairs qualify under {pair_filter}")
    props = np.mean(per_user, axis=0) if macro else totals / n_pairs
    return AgreementTriple(float(props[0]), float(props[1]), float(props[2]), n_pairs)

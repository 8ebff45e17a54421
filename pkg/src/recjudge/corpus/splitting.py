"""Train/test splits and relevance labels derived from held-out interactions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from ..errors import ValidationError
from .interactions import InteractionLog
from .trec import DEFAULT_MAX_GRADE, Qrels

STRATEGIES = ("per_user_time_ordered", "global_time", "per_user_random")


@dataclass(frozen=True)
class SplitSpec:
    strategy: str
    train_fraction: Optional[float] = None
    cutoff_timestamp: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown split strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.strategy == "global_time":
            if self.cutoff_timestamp is None or self.train_fraction is not None:
                raise ValidationError("global_time takes cutoff_timestamp and no train_fraction")
        else:
            if self.train_fraction is None or self.cutoff_timestamp is not None:
                raise ValidationError(f"{self.strategy} takes train_fraction and no cutoff_timestamp")
            if not 0.0 < self.train_fraction < 1.0:
                raise ValidationError(f"train_fraction {self.train_fraction} outside (0, 1)")


def _n_train(n: np.ndarray, fraction: float) -> np.ndarray:
    # the epsilon keeps ceil(0.7 * 10) at 7 despite 0.7 * 10 == 7.000000000000001
    return np.ceil(n * fraction - 1e-9).astype(int)


def split(log: InteractionLog, spec: SplitSpec) -> tuple[InteractionLog, InteractionLog]:
    """Partition ``log`` into ``(train, test)`` according to ``spec``.

    ``per_user_time_ordered`` puts each user's oldest ``ceil(X * n)``
    interactions in train (timestamp ties broken by item id);
    ``global_time`` sends ``timestamp < cutoff`` to train and the rest to
    test; ``per_user_random`` does the fraction split after a seeded shuffle.
    """
    df = log.frame
    if spec.strategy != "per_user_random" and not log.has_timestamps():
        raise ValidationError(f"{spec.strategy} split requires timestamps on every interaction")

    if spec.strategy == "global_time":
        in_train = (df["timestamp"] < spec.cutoff_timestamp).to_numpy(dtype=bool)
        return InteractionLog(df[in_train]), InteractionLog(df[~in_train])

    if spec.strategy == "per_user_time_ordered":
        df = df.sort_values(["user_id", "timestamp", "item_id"], kind="mergesort")
    else:
        df = df.sort_values(["user_id", "item_id", "timestamp"], kind="mergesort", na_position="first")
        rng = np.random.default_rng(spec.seed)
        df = df.assign(_key=rng.random(len(df))).sort_values(["user_id", "_key"], kind="mergesort")
        df = df.drop(columns="_key")
    position = df.groupby("user_id").cumcount().to_numpy()
    size = df.groupby("user_id")["user_id"].transform("size").to_numpy()
    in_train = position < _n_train(size, spec.train_fraction)
    return InteractionLog(df[in_train]), InteractionLog(df[~in_train])


class GradeMap:
    """Rating-to-grade table given as ``(min_rating, grade)`` thresholds.

    A rating maps to the grade of the highest threshold it reaches; ratings
    below every threshold are outside the table's domain.  Interactions with
    no rating (implicit feedback) get ``implicit_grade``.

    >>> gm = GradeMap([(4.0, 2), (0.5, 1)])
    >>> gm(5.0), gm(3.0)
    (2, 1)
    """

    def __init__(self, thresholds: Sequence[tuple[float, int]], implicit_grade: int = 1):
        self.thresholds = sorted(thresholds, reverse=True)
        self.implicit_grade = implicit_grade

    def __call__(self, rating: Optional[float]) -> int:
        if rating is None or (isinstance(rating, float) and math.isnan(rating)):
            return self.implicit_grade
        for minimum, grade in self.thresholds:
            if rating >= minimum:
                return grade
        raise ValidationError(f"rating {rating} is below every grade threshold")


GradeMapLike = Union[GradeMap, Mapping[float, int], Callable[[Optional[float]], int]]


def derive_qrels_from_test(
    test: InteractionLog, grade_map: GradeMapLike, max_grade: int = DEFAULT_MAX_GRADE
) -> Qrels:
    """One judgment per held-out ``(user, item)``; duplicates keep the max grade.

    ``grade_map`` may be a :class:`GradeMap`, any callable, or a dict of exact
    ratings to grades (a rating missing from the dict is an error).
    """
    if isinstance(grade_map, Mapping):
        table = dict(grade_map)

        def lookup(rating):
            if rating is None or (isinstance(rating, float) and math.isnan(rating)):
                raise ValidationError("implicit interaction has no entry in an exact rating table")
            try:
                return table[rating]
            except KeyError:
                raise ValidationError(f"rating {rating} not in grade table") from None

        fn = lookup
    else:
        fn = grade_map
    best: dict[tuple[str, str], int] = {}
    for it in test:
        grade = fn(it.rating)
        key = (it.user_id, it.item_id)
        if grade > best.get(key, -1):
            best[key] = grade
    return Qrels(best, max_grade=max_grade)


def implicit_grade_map(grade: int = 1) -> GradeMap:
    """Every interaction, rated or not, gets the same positive ``grade``."""
    return GradeMap([(-math.inf, grade)], implicit_grade=grade)


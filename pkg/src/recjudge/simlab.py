"""Synthetic preference worlds and parametric recommenders.

A world has latent user and item vectors; their min-max normalized dot
product is the true affinity, bucketed into 0-7 grades by thresholds.
Logged interactions are drawn with probability proportional to
``exposure * affinity ** gamma`` where exposure follows a Zipf law over
a random item order (``popularity_skew`` is its exponent) and ``gamma``
grows with ``mnar_strength``, so the log over-represents popular and
well-liked items the way production logs do.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .corpus.interactions import InteractionLog
from .corpus.items import ItemRecord, write_catalog
from .corpus.trec import Qrels, RunSet, write_qrels
from .errors import ValidationError

# affinity exponent at mnar_strength == 1
MNAR_SCALE = 8.0
DEFAULT_GRADE_QUANTILES = (0.5, 0.7, 0.8, 0.88, 0.94, 0.97, 0.99)

_GENRES = ("Action", "Comedy", "Drama", "Horror", "Romance", "Sci-Fi", "Documentary", "Animation",
           "Thriller", "Fantasy", "Crime", "Musical")
_WORDS_A = ("Silent", "Crimson", "Last", "Hidden", "Broken", "Golden", "Distant", "Electric", "Quiet", "Wild")
_WORDS_B = ("River", "Empire", "Signal", "Garden", "Harbor", "Machine", "Summer", "Witness", "Frontier", "Echo")
_FIRST = ("Ana", "Ben", "Chen", "Dara", "Eli", "Farah", "Gus", "Hana", "Ivo", "Jun", "Kai", "Lena")
_LAST = ("Moreau", "Okafor", "Silva", "Tanaka", "Novak", "Reyes", "Berg", "Costa", "Dahl", "Ivanova")
_LANGS = ("English", "French", "Spanish", "Japanese", "Korean", "German")


@dataclass(frozen=True)
class WorldSpec:
    n_users: int = 200
    n_items: int = 2000
    latent_dim: int = 8
    popularity_skew: float = 1.0
    interactions_per_user: int = 60
    mnar_strength: float = 0.5
    grade_thresholds: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        for name in ("n_users", "n_items", "latent_dim", "interactions_per_user"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.interactions_per_user > self.n_items:
            raise ValidationError("interactions_per_user exceeds n_items")
        if self.popularity_skew < 0:
            raise ValidationError("popularity_skew must be >= 0")
        if not 0.0 <= self.mnar_strength <= 1.0:
            raise ValidationError("mnar_strength must be in [0, 1]")
        if self.grade_thresholds is not None:
            t = tuple(float(x) for x in self.grade_thresholds)
            if len(t) != 7 or any(b <= a for a, b in zip(t, t[1:])):
                raise ValidationError("grade_thresholds must be 7 strictly ascending values")
            object.__setattr__(self, "grade_thresholds", t)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def _ids(prefix: str, n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"{prefix}{k:0{width}d}" for k in range(n)]


class TruthGrades:
    """Read-only, Qrels-like view of the true grade of every user-item pair,
    computed from the world's grade matrix on demand."""

    max_grade = 7

    def __init__(self, world: "World"):
        self._world = world

    def grade(self, user, item, default=None):
        w = self._world
        u, i = w.user_index.get(str(user)), w.item_index.get(str(item))
        if u is None or i is None:
            return default
        return int(w.grades[u, i])

    def __contains__(self, key):
        return self.grade(*key) is not None

    def __len__(self):
        return self._world.grades.size

    def users(self) -> list:
        return list(self._world.user_ids)

    def for_user(self, user) -> dict:
        w = self._world
        row = w.grades[w.user_index[str(user)]]
        return dict(zip(w.item_ids, row.tolist()))

    def relevant(self, user) -> dict:
        w = self._world
        row = w.grades[w.user_index[str(user)]]
        nz = np.flatnonzero(row)
        return {w.item_ids[i]: int(row[i]) for i in nz}

    def restrict(self, keep) -> Qrels:
        return Qrels((((u, i), self.grade(u, i)) for u, i in keep if (u, i) in self))

    def pairs(self):
        w = self._world
        for u, user in enumerate(w.user_ids):
            for i, item in enumerate(w.item_ids):
                yield (user, item), int(w.grades[u, i])


class World:
    """A generated world: latent factors, logged interactions and catalog."""

    def __init__(self, spec: WorldSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        self.user_ids = _ids("u", spec.n_users)
        self.item_ids = _ids("i", spec.n_items)
        self.user_index = {u: k for k, u in enumerate(self.user_ids)}
        self.item_index = {i: k for k, i in enumerate(self.item_ids)}
        self.user_factors = rng.normal(size=(spec.n_users, spec.latent_dim))
        self.item_factors = rng.normal(size=(spec.n_items, spec.latent_dim))
        exposure_rank = rng.permutation(spec.n_items) + 1
        self.exposure = exposure_rank.astype(float) ** -spec.popularity_skew
        self._rng = rng
        self.interactions = self._log_interactions()
        self.catalog = self._make_catalog()

    @cached_property
    def affinity(self) -> np.ndarray:
        raw = self.user_factors @ self.item_factors.T
        lo, hi = raw.min(), raw.max()
        return (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)

    @cached_property
    def thresholds(self) -> np.ndarray:
        if self.spec.grade_thresholds is not None:
            return np.array(self.spec.grade_thresholds)
        return np.quantile(self.affinity, DEFAULT_GRADE_QUANTILES)

    @cached_property
    def grades(self) -> np.ndarray:
        return np.searchsorted(self.thresholds, self.affinity, side="right").astype(np.int8)

    @property
    def truth(self) -> TruthGrades:
        return TruthGrades(self)

    def truth_qrels(self, pairs=None) -> Qrels:
        """Materialize true grades for ``pairs`` (default: every pair)."""
        if pairs is None:
            return Qrels(self.truth.pairs())
        return self.truth.restrict(pairs)

    def _log_interactions(self) -> InteractionLog:
        spec, rng = self.spec, self._rng
        gamma = MNAR_SCALE * spec.mnar_strength
        n = spec.interactions_per_user
        rows_u, rows_i, rows_t = [], [], []
        starts = rng.integers(0, 10 * n, size=spec.n_users)
        for u in range(spec.n_users):
            weights = self.exposure * self.affinity[u] ** gamma if gamma > 0 else self.exposure.copy()
            if np.count_nonzero(weights) < n:
                weights = weights + 1e-12
            chosen = rng.choice(spec.n_items, size=n, replace=False, p=weights / weights.sum())
            rng.shuffle(chosen)
            rows_u.append(np.full(n, u))
            rows_i.append(chosen)
            rows_t.append(starts[u] + np.arange(n))
        users = np.concatenate(rows_u)
        items = np.concatenate(rows_i)
        aff = self.affinity[users, items]
        frame = pd.DataFrame(
            {
                "user_id": np.array(self.user_ids, dtype=object)[users],
                "item_id": np.array(self.item_ids, dtype=object)[items],
                "rating": np.round((0.5 + 4.5 * aff) * 2) / 2,
                "timestamp": np.concatenate(rows_t),
            }
        )
        return InteractionLog(frame, report={"world_seed": spec.seed})

    def _make_catalog(self) -> dict:
        rng = np.random.default_rng([self.spec.seed, 1])
        frame = self.interactions.frame
        stats = frame.groupby("item_id")["rating"].agg(["mean", "size"])
        catalog = {}
        for k, item in enumerate(self.item_ids):
            v = self.item_factors[k]
            genres = [_GENRES[d % len(_GENRES)] for d in np.flatnonzero(v > 0.8)[:3]] or [
                _GENRES[int(np.argmax(v)) % len(_GENRES)]
            ]
            people = rng.integers(0, len(_FIRST), size=4), rng.integers(0, len(_LAST), size=4)
            names = [f"{_FIRST[a]} {_LAST[b]}" for a, b in zip(*people)]
            mean, size = (stats.loc[item, "mean"], int(stats.loc[item, "size"])) if item in stats.index else (None, 0)
            catalog[item] = ItemRecord(
                item_id=item,
                title=f"The {_WORDS_A[rng.integers(len(_WORDS_A))]} {_WORDS_B[rng.integers(len(_WORDS_B))]} ({k})",
                average_rating=None if mean is None else round(float(mean), 2),
                genres=tuple(dict.fromkeys(genres)),
                directors=(names[0],),
                overview=f"A {genres[0].lower()} story about {_WORDS_B[rng.integers(len(_WORDS_B))].lower()}s.",
                cast=tuple(names[1:]),
                runtime_minutes=int(80 + rng.integers(0, 80)),
                num_ratings=size,
                year=int(1950 + rng.integers(0, 74)),
                languages=(_LANGS[0] if rng.random() < 0.7 else _LANGS[int(rng.integers(1, len(_LANGS)))],),
            )
        return catalog

    def write(self, directory, include_truth: bool = True) -> dict:
        """Export as ``interactions.csv``, ``catalog.jsonl``, ``truth.qrels``
        and ``world.json``; returns the written paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "interactions": directory / "interactions.csv",
            "catalog": directory / "catalog.jsonl",
            "spec": directory / "world.json",
        }
        self.interactions.to_csv(paths["interactions"])
        write_catalog(self.catalog, paths["catalog"])
        paths["spec"].write_text(json.dumps(self.spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if include_truth:
            paths["truth"] = directory / "truth.qrels"
            write_qrels(self.truth_qrels(), paths["truth"])
        return paths


def generate_world(spec: WorldSpec) -> World:
    return World(spec)


@dataclass(frozen=True)
class SimRecommender:
    """A parametric stand-in for a trained recommender.

    Scores are ``quality * affinity + (1 - quality) * noise * spread * z +
    popularity_mix * popularity`` where ``z`` is the recommender's private
    standard-normal taste error, ``spread`` the standard deviation of the
    world's affinities and ``popularity`` the item's train-set count scaled
    to [0, 1].
    """

    tag: str
    quality: float
    popularity_mix: float = 0.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.quality <= 1.0:
            raise ValidationError("quality must be in [0, 1]")
        if not 0.0 <= self.popularity_mix <= 1.0:
            raise ValidationError("popularity_mix must be in [0, 1]")


def popularity_recommender(tag: str = "Pop") -> SimRecommender:
    return SimRecommender(tag, quality=0.0, popularity_mix=1.0, noise=0.0)


def _tag_seed(rec: SimRecommender) -> list:
    return [rec.seed, int.from_bytes(hashlib.sha256(rec.tag.encode()).digest()[:4], "little")]


def run_recommender(rec: SimRecommender, world: World, train: InteractionLog, k: int, users=None) -> RunSet:
    """Top-``k`` run of ``rec`` for every world user (or ``users``), never
    recommending an item already in that user's ``train`` history."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    df = train.frame
    counts = df["item_id"].value_counts()
    popularity = np.zeros(len(world.item_ids))
    idx = [world.item_index[i] for i in counts.index]
    popularity[idx] = counts.to_numpy(dtype=float)
    if popularity.max() > 0:
        popularity /= popularity.max()

    user_list = world.user_ids if users is None else [str(u) for u in users]
    rows = np.array([world.user_index[u] for u in user_list], dtype=int)
    scores = rec.quality * world.affinity[rows] + rec.popularity_mix * popularity[None, :]
    if rec.quality < 1.0 and rec.noise > 0:
        rng = np.random.default_rng(_tag_seed(rec))
        z = rng.standard_normal(size=(len(world.user_ids), len(world.item_ids)))[rows]
        scores = scores + (1.0 - rec.quality) * rec.noise * float(world.affinity.std()) * z

    seen_u = [world.user_index[u] for u in df["user_id"]]
    seen_i = [world.item_index[i] for i in df["item_id"]]
    pos = {u: r for r, u in enumerate(rows)}
    mask_rows = np.array([pos.get(u, -1) for u in seen_u], dtype=int)
    keep = mask_rows >= 0
    scores[mask_rows[keep], np.array(seen_i, dtype=int)[keep]] = -np.inf

    kk = min(k, len(world.item_ids))
    item_order = np.arange(len(world.item_ids))
    rankings = {}
    for r, user in enumerate(user_list):
        s = scores[r]
        # descending score, ties by item index (== item id order)
        order = np.lexsort((item_order, -s))
        top = [j for j in order[:kk] if np.isfinite(s[j])]
        rankings[user] = [(world.item_ids[j], float(s[j])) for j in top]
    return RunSet(rec.tag, rankings)


def quality_ladder(
    n: int,
    seed: int = 0,
    popularity_mixes: Sequence[float] = (0.0, 0.05, 0.1),
    low: float = 0.0,
    high: float = 1.0,
) -> list:
    """``n`` recommenders with evenly spaced quality from ``low`` to ``high``
    and a rotating popularity blend."""
    if n < 2:
        raise ValidationError("a ladder needs at least two recommenders")
    if not 0.0 <= low <= high <= 1.0:
        raise ValidationError("ladder qualities must satisfy 0 <= low <= high <= 1")
    qualities = np.linspace(low, high, n)
    width = len(str(n - 1))
    return [
        SimRecommender(
            tag=f"sim{j:0{width}d}",
            quality=float(q),
            popularity_mix=float(popularity_mixes[j % len(popularity_mixes)]),
            seed=seed,
        )
        for j, q in enumerate(qualities)
    ]

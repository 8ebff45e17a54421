"""User profiles and judge prompts."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from ..corpus.interactions import InteractionLog
from ..corpus.items import FIELD_LABELS, METADATA_FIELDS, ItemRecord
from ..errors import ValidationError

_log = logging.getLogger(__name__)

DEFAULT_HISTORY_SIZE = 1000
MAX_GRADE = 7

DEFAULT_INSTRUCTION = (
    "You are judging a movie recommendation made for one user. Use the metadata of "
    "the recommended movie and the movies this user has interacted with before to "
    "estimate how interested the user would be in watching the recommended movie."
)

# rubric dimensions of the criteria mode; names are the output keys
CRITERIA = {
    "Genre & Subgenre": "match between the recommended movie's category (action, romance, sci-fi, ...) "
    "and the categories the user favours",
    "Tone & Mood": "match with the tones the user favours, such as lighthearted, dark, intense or uplifting",
    "Story Complexity": "match with the user's taste for straightforward versus layered stories",
    "Pacing": "match with the user's taste for slow or fast pacing",
    "Themes & Topics": "match with the underlying themes the user gravitates to, e.g. friendship, "
    "dystopia, revenge",
    "Cast & Crew": "match with the actors, directors and writers the user likes",
    "Cultural / Regional Context": "match with the origins, languages and cultural perspectives the user favours",
    "Runtime / Commitment": "match with the movie lengths the user tends to choose",
    "Release Period": "match with the user's taste for classic versus recent movies",
    "Trend & Popularity": "match with the user's taste for mainstream versus niche movies",
    "Average Ratings": "match with the user's taste for highly rated movies",
}
CRITERIA_NAMES = tuple(CRITERIA)

PLAIN_SCHEMA = ("reasoning", "interest_in_watching")
CRITERIA_SCHEMA = ("reasoning", *CRITERIA_NAMES, "interest_in_watching")
RUBRICS = ("none", "criteria")
SELECTIONS = ("random_sample", "most_recent")


@dataclass(frozen=True)
class ProfileSpec:
    """How a user's history is turned into profile text."""

    history_size: int = DEFAULT_HISTORY_SIZE
    selection: str = "random_sample"
    seed: int = 0
    fields: tuple = METADATA_FIELDS

    def __post_init__(self):
        if self.history_size < 1:
            raise ValidationError("history_size must be >= 1")
        if self.selection not in SELECTIONS:
            raise ValidationError(f"unknown history selection {self.selection!r}")
        unknown = set(self.fields) - set(METADATA_FIELDS)
        if unknown:
            raise ValidationError(f"unknown metadata fields {sorted(unknown)}")
        if "title" not in self.fields:
            raise ValidationError("profile fields must include title")
        # canonical order regardless of how the caller listed them
        object.__setattr__(self, "fields", tuple(f for f in METADATA_FIELDS if f in set(self.fields)))


@dataclass(frozen=True)
class JudgePrompt:
    instruction: str
    user_profile_text: str
    candidate_text: str
    rubric: str = "none"
    output_schema: tuple = PLAIN_SCHEMA

    @property
    def text(self) -> str:
        parts = [
            "Instruction:",
            self.instruction,
            "",
            "Inputs:",
            "User profile:",
            self.user_profile_text,
            f"Movie recommendation: {self.candidate_text}",
            "",
        ]
        if self.rubric == "criteria":
            parts.append(f"Criteria (score each from 0 to {MAX_GRADE}):")
            parts.extend(f"{name}: {desc}" for name, desc in CRITERIA.items())
            parts.append("")
        parts.append("Expected output:")
        parts.append("reasoning: why the user would or would not want to watch the movie, given their history.")
        if self.rubric == "criteria":
            parts.extend(f"{name}: integer score from 0 to {MAX_GRADE}." for name in CRITERIA_NAMES)
        parts.append(
            f"interest_in_watching: how interested the user is in watching the movie, from 0 to {MAX_GRADE}."
        )
        keys = ", ".join(f'"{k}"' for k in self.output_schema)
        parts.append(f"Reply with one JSON object with exactly these keys: {keys}.")
        return "\n".join(parts)

    def messages(self) -> list[dict]:
        return [{"role": "user", "content": self.text}]


def render_item(record: ItemRecord, fields=METADATA_FIELDS) -> str:
    """One item's metadata as ``Label: value`` segments in canonical order."""
    chosen = set(fields)
    segments = []
    for name in METADATA_FIELDS:
        if name in chosen:
            text = record.field_text(name)
            segments.append(f"{FIELD_LABELS[name]}: {text if text is not None else 'unknown'}")
    return " | ".join(segments)


def _user_rng(seed: int, user: str) -> np.random.Generator:
    digest = hashlib.sha256(f"profile\x1f{seed}\x1f{user}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def select_history(user, history: InteractionLog, catalog: Mapping[str, ItemRecord], spec: ProfileSpec) -> list:
    """Item ids that go into the profile, in rendering order."""
    user = str(user)
    df = history.frame
    df = df[df["user_id"] == user]
    if df.empty:
        raise ValidationError(f"user {user} has no history")
    if spec.selection == "most_recent":
        if df["timestamp"].isna().any():
            raise ValidationError("most_recent selection requires timestamps")
        df = df.sort_values(["timestamp", "item_id"], ascending=[False, True], kind="mergesort")
    items = list(dict.fromkeys(df["item_id"]))
    missing = [i for i in items if i not in catalog]
    if missing:
        _log.warning("user %s: %d history item(s) without metadata skipped", user, len(missing))
        items = [i for i in items if i in catalog]
    if not items:
        raise ValidationError(f"user {user} has no history items with metadata")
    n = min(spec.history_size, len(items))
    if spec.selection == "random_sample":
        # rendered in sampled order
        order = _user_rng(spec.seed, user).permutation(len(items))[:n]
        return [items[k] for k in order]
    return items[:n]


def build_profile(user, history: InteractionLog, catalog: Mapping[str, ItemRecord], spec: ProfileSpec) -> str:
    """Profile text: one ``Movie metadata:`` line per selected history item."""
    items = select_history(user, history, catalog, spec)
    return "\n".join(f"Movie metadata: {render_item(catalog[i], spec.fields)}" for i in items)


def render_prompt(
    profile_text: str,
    candidate: ItemRecord,
    fields=METADATA_FIELDS,
    rubric: str = "none",
    instruction: Optional[str] = None,
) -> JudgePrompt:
    if rubric not in RUBRICS:
        raise ValidationError(f"unknown rubric {rubric!r}")
    return JudgePrompt(
        instruction=instruction or DEFAULT_INSTRUCTION,
        user_profile_text=profile_text,
        candidate_text=render_item(candidate, fields),
        rubric=rubric,
        output_schema=CRITERIA_SCHEMA if rubric == "criteria" else PLAIN_SCHEMA,
    )

"""Judge verdicts: parsing model output and turning it into grades."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

from ..errors import SchemaError
from .prompts import CRITERIA_NAMES, MAX_GRADE

AGGREGATIONS = ("cot_overall", "sum_aggregation")


class VerdictParseError(SchemaError):
    def __init__(self, message, raw=""):
        super().__init__(message)
        self.raw = raw


@dataclass
class JudgeVerdict:
    user_id: str
    item_id: str
    repetition: int
    reasoning: str
    overall: Optional[int]
    criteria_scores: Optional[dict] = None
    backend_id: str = ""
    latency_ms: int = 0
    cached: bool = False
    raw: str = ""

    def __post_init__(self):
        if self.overall is not None and not 0 <= self.overall <= MAX_GRADE:
            raise SchemaError(f"overall grade {self.overall} outside [0, {MAX_GRADE}]")
        if self.criteria_scores is not None and set(self.criteria_scores) != set(CRITERIA_NAMES):
            raise SchemaError("criteria_scores must hold exactly the rubric criteria")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "JudgeVerdict":
        return cls(**d)


def _first_json_object(text: str) -> Optional[dict]:
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            return obj
        start = text.find("{", start + 1)
    return None


def _grade(value, name: str) -> int:
    if isinstance(value, bool):
        raise SchemaError(f"{name}: boolean is not a grade")
    if isinstance(value, str):
        value = value.strip()
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise SchemaError(f"{name}: {value!r} is not a number") from None
    if number != int(number) or not 0 <= number <= MAX_GRADE:
        raise SchemaError(f"{name}: {value!r} is not an integer in [0, {MAX_GRADE}]")
    return int(number)


def parse_verdict(raw: str, rubric: str = "none", **meta) -> JudgeVerdict:
    """Parse a model reply into a :class:`JudgeVerdict`.

    The reply should be a JSON object; when it is not, the first well-formed
    object embedded in the text is used.  ``meta`` fills the bookkeeping
    fields (user_id, item_id, repetition, backend_id, latency_ms).
    """
    try:
        obj = json.loads(raw)
    except (json.JSONDecodeError, TypeError):
        obj = None
    if not isinstance(obj, dict):
        obj = _first_json_object(raw or "")
    if obj is None:
        raise VerdictParseError("no JSON object in judge reply", raw)
    try:
        overall = obj.get("interest_in_watching")
        overall = None if overall is None else _grade(overall, "interest_in_watching")
        criteria = None
        if rubric == "criteria":
            missing = [c for c in CRITERIA_NAMES if c not in obj]
            if missing:
                raise SchemaError(f"missing criteria {missing}")
            criteria = {c: _grade(obj[c], c) for c in CRITERIA_NAMES}
        elif overall is None:
            raise SchemaError("missing interest_in_watching")
    except SchemaError as exc:
        raise VerdictParseError(str(exc), raw) from None
    return JudgeVerdict(
        user_id=str(meta.get("user_id", "")),
        item_id=str(meta.get("item_id", "")),
        repetition=int(meta.get("repetition", 0)),
        reasoning=str(obj.get("reasoning", "")),
        overall=overall,
        criteria_scores=criteria,
        backend_id=meta.get("backend_id", ""),
        latency_ms=int(meta.get("latency_ms", 0)),
        raw=raw,
    )


def score_aggregation(verdict: JudgeVerdict, mode: str = "cot_overall") -> int:
    """Final grade of a verdict.

    ``cot_overall`` takes the judge's own overall score; ``sum_aggregation``
    adds up the criterion scores without rescaling (range 0..77).
    """
    if mode == "cot_overall":
        if verdict.overall is None:
            raise SchemaError("cot_overall needs an overall score")
        return verdict.overall
    if mode == "sum_aggregation":
        if verdict.criteria_scores is None:
            raise SchemaError("sum_aggregation needs criteria scores")
        return sum(verdict.criteria_scores.values())
    raise ValueError(f"unknown aggregation {mode!r}")


def max_aggregated_grade(mode: str) -> int:
    return MAX_GRADE * len(CRITERIA_NAMES) if mode == "sum_aggregation" else MAX_GRADE

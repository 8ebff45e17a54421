"""Running a judge over many (user, item) pairs with caching and retries."""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

from ..corpus.interactions import InteractionLog
from ..corpus.items import ItemRecord
from ..corpus.trec import Qrels
from ..errors import BackendError, RecJudgeError, SchemaError, ValidationError
from .backends import Backend, JudgeRequest, ReplayCacheBackend
from .cache import VerdictCache, cache_key, content_key
from .prompts import ProfileSpec, build_profile, render_prompt
from .verdicts import JudgeVerdict, max_aggregated_grade, score_aggregation

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 1.0
    factor: float = 2.0
    sleep: Callable[[float], None] = time.sleep

    def delays(self):
        return [self.base_delay * self.factor**k for k in range(self.attempts - 1)]


@dataclass
class JudgeRun:
    """Outcome of :func:`judge_items`.

    ``qrels`` holds one judged Qrels per repetition; ``verdicts`` every
    successful verdict in ``(user, item, repetition)`` order; ``failures``
    one record per failed request.
    """

    qrels: list
    verdicts: list
    failures: list = field(default_factory=list)
    backend_calls: int = 0
    requested: int = 0

    @property
    def failure_rate(self) -> float:
        return len(self.failures) / self.requested if self.requested else 0.0

    def write_verdicts(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for v in self.verdicts:
                fh.write(json.dumps(v.to_dict(), sort_keys=True) + "\n")

    def write_failures(self, path) -> None:
        Path(path).write_text(json.dumps(self.failures, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _call_with_retry(backend: Backend, request: JudgeRequest, retry: RetryPolicy) -> JudgeVerdict:
    delays = retry.delays()
    for attempt in range(retry.attempts):
        try:
            return backend.judge(request)
        except BackendError as exc:
            if not exc.transient or attempt == retry.attempts - 1:
                raise
            _log.info("transient backend error (%s), retry %d/%d", exc, attempt + 1, retry.attempts - 1)
            retry.sleep(delays[attempt])
    raise AssertionError("unreachable")


def judge_items(
    pairs: Iterable,
    backend: Backend,
    history: InteractionLog,
    catalog: Mapping[str, ItemRecord],
    spec: Optional[ProfileSpec] = None,
    rubric: str = "none",
    repetitions: int = 3,
    aggregation: str = "cot_overall",
    cache: Optional[VerdictCache] = None,
    max_in_flight: int = 4,
    retry: Optional[RetryPolicy] = None,
) -> JudgeRun:
    """Judge every ``(user, item)`` pair ``repetitions`` times.

    Verdicts are looked up in ``cache`` first and stored there after a
    backend call, so a second run over the same inputs makes no calls.
    Transport failures are retried per ``retry``; pairs that still fail, or
    whose reply cannot be parsed, are left out of the qrels and listed in
    ``failures``.
    """
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    spec = spec or ProfileSpec()
    cache = cache if cache is not None else VerdictCache()
    retry = retry or RetryPolicy()
    pairs = sorted(dict.fromkeys((str(u), str(i)) for u, i in pairs))
    replay = isinstance(backend, ReplayCacheBackend)

    profiles, failures = {}, []
    for user in sorted({u for u, _ in pairs}):
        try:
            profiles[user] = build_profile(user, history, catalog, spec)
        except ValidationError as exc:
            profiles[user] = exc

    calls = 0
    calls_lock = threading.Lock()

    def task(user, item, rep):
        nonlocal calls
        profile = profiles[user]
        if isinstance(profile, Exception):
            raise profile
        if item not in catalog:
            raise ValidationError(f"item {item} has no metadata")
        prompt = render_prompt(profile, catalog[item], spec.fields, rubric)
        key = cache_key(backend.identity, prompt.text, rep)
        ckey = content_key(prompt.text, rep)
        hit = cache.get_content(ckey) if replay else cache.get(key)
        if hit is not None:
            return hit
        if replay:
            raise BackendError(f"no cached verdict for ({user}, {item}, repetition {rep})")
        with calls_lock:
            calls += 1
        verdict = _call_with_retry(backend, JudgeRequest(user, item, rep, prompt, spec), retry)
        verdict.user_id, verdict.item_id, verdict.repetition = user, item, rep
        cache.put(key, ckey, verdict)
        return verdict

    jobs = [(u, i, r) for u, i in pairs for r in range(repetitions)]
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        futures = [pool.submit(task, *job) for job in jobs]

    max_grade = max_aggregated_grade(aggregation) if rubric == "criteria" else max_aggregated_grade("cot_overall")
    qrels = [Qrels(max_grade=max_grade) for _ in range(repetitions)]
    verdicts = []
    for (user, item, rep), fut in zip(jobs, futures):
        exc = fut.exception()
        if exc is not None and not isinstance(exc, RecJudgeError):
            raise exc
        grade = None
        if exc is None:
            verdict = fut.result()
            try:
                grade = score_aggregation(verdict, aggregation)
            except SchemaError as err:
                exc = err
        if exc is not None:
            failures.append(
                {
                    "user_id": user,
                    "item_id": item,
                    "repetition": rep,
                    "error": f"{type(exc).__name__}: {exc}",
                    "raw": getattr(exc, "raw", ""),
                }
            )
            continue
        verdicts.append(verdict)
        qrels[rep]._set(user, item, grade)
    if failures:
        _log.warning("%d of %d judge requests failed", len(failures), len(jobs))
    return JudgeRun(qrels, verdicts, failures, calls, len(jobs))


def average_labels(qrels_list: list) -> Qrels:
    """Per-pair mean grade across repetitions, rounded half up."""
    sums: dict[tuple, list] = {}
    for q in qrels_list:
        for key, grade in q.pairs():
            sums.setdefault(key, []).append(grade)
    max_grade = max((q.max_grade for q in qrels_list), default=7)
    return Qrels(
        ((k, int(sum(g) / len(g) + 0.5)) for k, g in sums.items()),
        max_grade=max_grade,
    )

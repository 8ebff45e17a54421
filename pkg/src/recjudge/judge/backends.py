"""Judge backends: an HTTP chat-completion client, a seeded synthetic oracle
standing in for a language model, and a cache-only replay backend."""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import requests

from ..corpus.trec import Qrels, read_qrels
from ..errors import BackendError, TransientBackendError, ValidationError
from .prompts import CRITERIA_NAMES, MAX_GRADE, JudgePrompt, ProfileSpec
from .verdicts import JudgeVerdict, parse_verdict

BACKEND_KINDS = ("http_chat", "synthetic_oracle", "replay_cache")
DEFAULT_CRITERIA_JITTER = 1.0


@dataclass(frozen=True)
class JudgeRequest:
    user_id: str
    item_id: str
    repetition: int
    prompt: JudgePrompt
    spec: ProfileSpec


@dataclass
class BackendConfig:
    kind: str
    endpoint_url: str = ""
    model_name: str = ""
    auth_env_var: str = ""
    params: dict = field(default_factory=dict)
    timeout: float = 60.0
    noise_level: float = 0.0
    item_bias: float = 0.0
    truth: Optional[Qrels] = None
    seed: int = 0
    cache_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValidationError(f"unknown backend kind {self.kind!r}; expected one of {BACKEND_KINDS}")
        if self.noise_level < 0:
            raise ValidationError("noise_level must be >= 0")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_backend_config(path, section: str = "backend") -> BackendConfig:
    """Read a backend section from an INI-style config file.

    Keys ``param.<name>`` are passed through to the HTTP request body.  A
    ``truth`` key names a qrels file for the synthetic oracle.  Secrets are
    never read from the file: give ``auth_env_var`` instead.
    """
    parser = configparser.ConfigParser(interpolation=None)
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    if not parser.has_section(section):
        raise ValidationError(f"{path}: no [{section}] section")
    sec = parser[section]
    for forbidden in ("api_key", "token", "password", "authorization"):
        if forbidden in sec:
            raise ValidationError(f"{path}: credentials must come from an environment variable, not '{forbidden}'")
    params = {k[len("param."):]: _parse_value(v) for k, v in sec.items() if k.startswith("param.")}
    truth = None
    if sec.get("truth"):
        truth_path = Path(sec["truth"])
        if not truth_path.is_absolute():
            truth_path = Path(path).parent / truth_path
        truth = read_qrels(truth_path)
    return BackendConfig(
        kind=sec.get("kind", "http_chat"),
        endpoint_url=sec.get("endpoint_url", ""),
        model_name=sec.get("model_name", ""),
        auth_env_var=sec.get("auth_env_var", ""),
        params=params,
        timeout=sec.getfloat("timeout", 60.0),
        noise_level=sec.getfloat("noise_level", 0.0),
        item_bias=sec.getfloat("item_bias", 0.0),
        truth=truth,
        seed=sec.getint("seed", 0),
        cache_path=sec.get("cache_path") or None,
    )


class Backend:
    """Produces one verdict per request.

    Subclasses raise :class:`TransientBackendError` for failures worth a
    retry and :class:`BackendError` for anything else.
    """

    identity = "backend"

    def judge(self, request: JudgeRequest) -> JudgeVerdict:
        raise NotImplementedError


class HttpChatBackend(Backend):
    def __init__(self, config: BackendConfig, session: Optional[requests.Session] = None):
        if not config.endpoint_url:
            raise ValidationError("http_chat backend needs endpoint_url")
        self.config = config
        self.session = session or requests.Session()
        params = json.dumps(config.params, sort_keys=True)
        self.identity = f"http_chat:{config.endpoint_url}:{config.model_name}:{params}"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_env_var:
            key = os.environ.get(self.config.auth_env_var, "")
            if not key:
                raise BackendError(f"environment variable {self.config.auth_env_var} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def judge(self, request: JudgeRequest) -> JudgeVerdict:
        body = {"model": self.config.model_name, "messages": request.prompt.messages(), **self.config.params}
        started = time.monotonic()
        try:
            resp = self.session.post(
                self.config.endpoint_url, json=body, headers=self._headers(), timeout=self.config.timeout
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransientBackendError(f"transport error: {exc}") from exc
        latency = int((time.monotonic() - started) * 1000)
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected response shape: {exc}") from exc
        return parse_verdict(
            content,
            request.prompt.rubric,
            user_id=request.user_id,
            item_id=request.item_id,
            repetition=request.repetition,
            backend_id=self.identity,
            latency_ms=latency,
        )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _clamp(x: int) -> int:
    return min(MAX_GRADE, max(0, x))


def _oracle_rng(seed: int, user: str, item: str, repetition: int) -> np.random.Generator:
    digest = hashlib.sha256(f"oracle\x1f{seed}\x1f{repetition}\x1f{user}\x1f{item}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def synthetic_oracle_verdict(
    user,
    item,
    truth,
    noise_level: float,
    seed: int,
    rubric: str = "none",
    repetition: int = 0,
    criteria_jitter: float = DEFAULT_CRITERIA_JITTER,
    item_bias: float = 0.0,
) -> JudgeVerdict:
    """A deterministic noisy copy of a known grade.

    A latent score ``truth + N(0, noise_level)`` is drawn from a generator
    seeded by ``(seed, repetition, user, item)``.  ``item_bias`` adds a
    per-item offset ``N(0, item_bias)`` seeded by ``(seed, item)`` only, so it
    is shared by all users and repetitions (a judge that systematically
    over- or under-rates some items).  The overall grade is the latent
    rounded half-up and clamped to 0..7.  With the criteria rubric, each
    criterion adds its own ``N(0, criteria_jitter)`` to the same latent.
    """
    user, item = str(user), str(item)
    grade = truth.grade(user, item)
    if grade is None:
        raise ValidationError(f"({user}, {item}) has no truth grade")
    rng = _oracle_rng(seed, user, item, repetition)
    latent = grade + (rng.normal(0.0, noise_level) if noise_level > 0 else 0.0)
    if item_bias > 0:
        latent += _oracle_rng(seed, "", item, -1).normal(0.0, item_bias)
    criteria = None
    if rubric == "criteria":
        jitter = rng.normal(0.0, criteria_jitter, size=len(CRITERIA_NAMES))
        criteria = {c: _clamp(_round_half_up(latent + e)) for c, e in zip(CRITERIA_NAMES, jitter)}
    overall = _clamp(_round_half_up(latent))
    return JudgeVerdict(
        user_id=user,
        item_id=item,
        repetition=repetition,
        reasoning=f"synthetic latent score {latent:.3f}",
        overall=overall,
        criteria_scores=criteria,
    )


class SyntheticOracleBackend(Backend):
    """Answers from known grades plus seeded noise.

    ``noise_fn``, when given, maps the request's :class:`ProfileSpec` to a
    noise level, which lets sweeps model judges that improve with more
    context.
    """

    def __init__(
        self,
        truth,
        noise_level: float = 0.0,
        seed: int = 0,
        noise_fn: Optional[Callable[[ProfileSpec], float]] = None,
        criteria_jitter: float = DEFAULT_CRITERIA_JITTER,
        item_bias: float = 0.0,
        name: str = "",
    ):
        self.truth = truth
        self.noise_level = noise_level
        self.seed = seed
        self.noise_fn = noise_fn
        self.criteria_jitter = criteria_jitter
        self.item_bias = item_bias
        self.calls = 0
        self.identity = name or (
            f"synthetic_oracle:noise={noise_level!r}:seed={seed}:jitter={criteria_jitter!r}:item_bias={item_bias!r}"
        )

    def judge(self, request: JudgeRequest) -> JudgeVerdict:
        self.calls += 1
        noise = self.noise_fn(request.spec) if self.noise_fn else self.noise_level
        try:
            verdict = synthetic_oracle_verdict(
                request.user_id,
                request.item_id,
                self.truth,
                noise,
                self.seed,
                request.prompt.rubric,
                request.repetition,
                self.criteria_jitter,
                self.item_bias,
            )
        except ValidationError as exc:
            raise BackendError(str(exc)) from exc
        verdict.backend_id = self.identity
        verdict.raw = json.dumps(
            {"reasoning": verdict.reasoning, "interest_in_watching": verdict.overall, **(verdict.criteria_scores or {})}
        )
        return verdict


class ReplayCacheBackend(Backend):
    """Serves only what is already cached; a cache miss is a hard failure."""

    def __init__(self, identity: str):
        self.identity = identity

    def judge(self, request: JudgeRequest) -> JudgeVerdict:
        raise BackendError(f"replay backend has no cached verdict for ({request.user_id}, {request.item_id})")


def make_backend(config: BackendConfig, replay_identity: Optional[str] = None) -> Backend:
    if config.kind == "http_chat":
        return HttpChatBackend(config)
    if config.kind == "synthetic_oracle":
        if config.truth is None:
            raise ValidationError("synthetic_oracle backend needs truth qrels")
        return SyntheticOracleBackend(config.truth, config.noise_level, config.seed, item_bias=config.item_bias)
    if not config.cache_path:
        raise ValidationError("replay_cache backend needs cache_path")
    return ReplayCacheBackend(replay_identity or config.model_name or "replay")

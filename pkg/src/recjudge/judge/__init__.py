"""Judge pipeline: profiles, prompts, backends, verdicts and caching."""

from .backends import (
    Backend,
    BackendConfig,
    HttpChatBackend,
    JudgeRequest,
    ReplayCacheBackend,
    SyntheticOracleBackend,
    load_backend_config,
    make_backend,
    synthetic_oracle_verdict,
)
from .cache import VerdictCache
from .pipeline import JudgeRun, RetryPolicy, average_labels, judge_items
from .prompts import (
    CRITERIA,
    CRITERIA_NAMES,
    JudgePrompt,
    ProfileSpec,
    build_profile,
    render_item,
    render_prompt,
)
from .verdicts import JudgeVerdict, VerdictParseError, parse_verdict, score_aggregation

__all__ = [
    "Backend",
    "BackendConfig",
    "CRITERIA",
    "CRITERIA_NAMES",
    "HttpChatBackend",
    "JudgePrompt",
    "JudgeRequest",
    "JudgeRun",
    "JudgeVerdict",
    "ProfileSpec",
    "ReplayCacheBackend",
    "RetryPolicy",
    "SyntheticOracleBackend",
    "VerdictCache",
    "VerdictParseError",
    "average_labels",
    "build_profile",
    "judge_items",
    "load_backend_config",
    "make_backend",
    "parse_verdict",
    "render_item",
    "render_prompt",
    "score_aggregation",
    "synthetic_oracle_verdict",
]

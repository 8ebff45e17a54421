import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from recjudge.corpus import Qrels
from recjudge.errors import BackendError, SchemaError, TransientBackendError, ValidationError
from recjudge.judge import (
    CRITERIA,
    CRITERIA_NAMES,
    Backend,
    BackendConfig,
    HttpChatBackend,
    JudgeRequest,
    ProfileSpec,
    ReplayCacheBackend,
    RetryPolicy,
    SyntheticOracleBackend,
    VerdictCache,
    VerdictParseError,
    average_labels,
    build_profile,
    judge_items,
    load_backend_config,
    make_backend,
    parse_verdict,
    render_item,
    render_prompt,
    score_aggregation,
    synthetic_oracle_verdict,
)
from recjudge.judge.prompts import select_history
from recjudge.judge.verdicts import JudgeVerdict

NO_SLEEP = RetryPolicy(sleep=lambda s: None)


# --- prompts -----------------------------------------------------------------


def test_criteria_names_are_fixed():
    assert len(CRITERIA) == 11
    assert CRITERIA_NAMES[0] == "Genre & Subgenre" and CRITERIA_NAMES[-1] == "Average Ratings"
    assert "Cultural / Regional Context" in CRITERIA


def test_render_item_canonical_order_and_unknown(tiny_catalog):
    text = render_item(tiny_catalog["m1"], ("year", "title", "cast"))
    assert text == "Title: Alpha | Cast: unknown | Year: 1999"


def test_profile_spec_requires_title_and_canonicalizes():
    assert ProfileSpec(fields=("genres", "title")).fields == ("title", "genres")
    with pytest.raises(ValidationError):
        ProfileSpec(fields=("genres",))
    with pytest.raises(ValidationError):
        ProfileSpec(fields=("title", "budget"))
    with pytest.raises(ValidationError):
        ProfileSpec(history_size=0)


def test_history_selection(tiny_history, tiny_catalog):
    recent = select_history("u1", tiny_history, tiny_catalog, ProfileSpec(history_size=2, selection="most_recent"))
    assert recent == ["m3", "m2"]
    spec = ProfileSpec(history_size=2, seed=9)
    a = select_history("u1", tiny_history, tiny_catalog, spec)
    assert a == select_history("u1", tiny_history, tiny_catalog, spec)
    assert len(a) == 2 and set(a) <= {"m1", "m2", "m3"}
    with pytest.raises(ValidationError):
        select_history("nobody", tiny_history, tiny_catalog, spec)


def test_prompt_text_layout(tiny_history, tiny_catalog):
    spec = ProfileSpec(history_size=5, fields=("title", "genres"))
    profile = build_profile("u2", tiny_history, tiny_catalog, spec)
    assert all(line.startswith("Movie metadata: Title: ") for line in profile.splitlines())
    prompt = render_prompt(profile, tiny_catalog["m5"], spec.fields)
    text = prompt.text
    assert text.index("Instruction:") < text.index("User profile:") < text.index("Movie recommendation:")
    assert "Movie recommendation: Title: Epsilon | Genres: unknown" in text
    assert '"reasoning", "interest_in_watching"' in text
    assert "Pacing" not in text
    crit = render_prompt(profile, tiny_catalog["m5"], spec.fields, rubric="criteria").text
    assert all(name in crit for name in CRITERIA_NAMES)
    assert prompt.messages() == [{"role": "user", "content": text}]
    with pytest.raises(ValidationError):
        render_prompt(profile, tiny_catalog["m5"], rubric="stars")


# --- verdict parsing -------------------------------------------------------------


def test_parse_plain_json():
    v = parse_verdict('{"reasoning": "likes drama", "interest_in_watching": 5}', user_id="u", item_id="i")
    assert (v.overall, v.reasoning, v.user_id) == (5, "likes drama", "u")


def test_parse_repairs_wrapped_json():
    raw = 'Sure! Here you go:\n```json\n{"reasoning": "x", "interest_in_watching": "6"}\n```'
    assert parse_verdict(raw).overall == 6


@pytest.mark.parametrize(
    "raw",
    ["no json here", '{"reasoning": "x"}', '{"interest_in_watching": 9}', '{"interest_in_watching": 2.5}',
     '{"interest_in_watching": true}'],
)
def test_parse_failures(raw):
    with pytest.raises(VerdictParseError) as info:
        parse_verdict(raw)
    assert info.value.raw == raw


def test_parse_criteria_and_aggregate():
    obj = {c: 3 for c in CRITERIA_NAMES}
    obj.update(reasoning="r", interest_in_watching=4)
    v = parse_verdict(json.dumps(obj), rubric="criteria")
    assert score_aggregation(v, "cot_overall") == 4
    assert score_aggregation(v, "sum_aggregation") == 33
    del obj["Pacing"]
    with pytest.raises(VerdictParseError):
        parse_verdict(json.dumps(obj), rubric="criteria")


def test_aggregation_needs_matching_fields():
    v = JudgeVerdict("u", "i", 0, "", 3)
    with pytest.raises(SchemaError):
        score_aggregation(v, "sum_aggregation")


# --- synthetic oracle ---------------------------------------------------------


def test_zero_noise_oracle_copies_truth(tiny_truth):
    for (u, i), g in tiny_truth.pairs():
        assert synthetic_oracle_verdict(u, i, tiny_truth, 0.0, seed=1).overall == g


def test_oracle_is_deterministic_and_bounded(tiny_truth):
    a = synthetic_oracle_verdict("u2", "m3", tiny_truth, 3.0, seed=5, rubric="criteria", repetition=2)
    b = synthetic_oracle_verdict("u2", "m3", tiny_truth, 3.0, seed=5, rubric="criteria", repetition=2)
    assert a == b
    assert 0 <= a.overall <= 7 and all(0 <= s <= 7 for s in a.criteria_scores.values())
    with pytest.raises(ValidationError):
        synthetic_oracle_verdict("u2", "zzz", tiny_truth, 0.0, 0)


def test_oracle_item_bias_is_shared_across_users():
    truth = Qrels({(f"u{k}", "x"): 3 for k in range(40)})
    grades = {synthetic_oracle_verdict(f"u{k}", "x", truth, 0.0, seed=2, item_bias=2.0).overall for k in range(40)}
    assert len(grades) == 1


# --- cache --------------------------------------------------------------------


def test_cache_persists_and_marks_hits(tmp_path):
    path = tmp_path / "c.jsonl"
    cache = VerdictCache(path)
    v = JudgeVerdict("u", "i", 0, "r", 3, backend_id="b")
    cache.put("k1", "c1", v)
    cache.put("k1", "c1", v)  # idempotent
    assert len(path.read_text().splitlines()) == 1
    again = VerdictCache(path)
    hit = again.get("k1")
    assert hit.cached and hit.overall == 3
    assert again.get_content("c1").overall == 3 and again.get("nope") is None


# --- pipeline -----------------------------------------------------------------


class FlakyBackend(Backend):
    """Fails transiently ``fail_times`` times per request, then answers."""

    identity = "flaky"

    def __init__(self, truth, fail_times=1, hard_items=()):
        self.truth, self.fail_times, self.hard_items = truth, fail_times, set(hard_items)
        self.attempts = {}
        self.lock = threading.Lock()

    def judge(self, request: JudgeRequest):
        key = (request.user_id, request.item_id, request.repetition)
        with self.lock:
            self.attempts[key] = self.attempts.get(key, 0) + 1
            n = self.attempts[key]
        if request.item_id in self.hard_items:
            raise BackendError("content filtered")
        if n <= self.fail_times:
            raise TransientBackendError("rate limited")
        return synthetic_oracle_verdict(request.user_id, request.item_id, self.truth, 0.0, 0)


def test_pipeline_zero_noise_reproduces_truth(tiny_truth, tiny_history, tiny_catalog):
    backend = SyntheticOracleBackend(tiny_truth, 0.0)
    run = judge_items([k for k, _ in tiny_truth.pairs()], backend, tiny_history, tiny_catalog, repetitions=2)
    assert run.failures == [] and all(q == tiny_truth for q in run.qrels)
    assert average_labels(run.qrels) == tiny_truth
    assert [(v.user_id, v.item_id, v.repetition) for v in run.verdicts] == sorted(
        (u, i, r) for (u, i), _ in tiny_truth.pairs() for r in range(2))


def test_pipeline_retries_transient_errors(tiny_truth, tiny_history, tiny_catalog):
    slept = []
    backend = FlakyBackend(tiny_truth, fail_times=2)
    run = judge_items([("u1", "m4")], backend, tiny_history, tiny_catalog, repetitions=1,
                      retry=RetryPolicy(sleep=slept.append))
    assert run.failures == [] and run.qrels[0]["u1", "m4"] == 6
    assert slept == [1.0, 2.0]


def test_pipeline_gives_up_after_three_attempts(tiny_truth, tiny_history, tiny_catalog):
    backend = FlakyBackend(tiny_truth, fail_times=5)
    run = judge_items([("u1", "m4")], backend, tiny_history, tiny_catalog, repetitions=1, retry=NO_SLEEP)
    assert backend.attempts[("u1", "m4", 0)] == 3
    assert len(run.failures) == 1 and "TransientBackendError" in run.failures[0]["error"]


def test_pipeline_partial_failure_excludes_items(tiny_truth, tiny_history, tiny_catalog):
    backend = FlakyBackend(tiny_truth, fail_times=0, hard_items={"m5"})
    pairs = [k for k, _ in tiny_truth.pairs()]
    run = judge_items(pairs, backend, tiny_history, tiny_catalog, repetitions=1, retry=NO_SLEEP)
    assert {f["item_id"] for f in run.failures} == {"m5"}
    assert backend.attempts[("u1", "m5", 0)] == 1  # hard errors are not retried
    assert ("u1", "m5") not in run.qrels[0] and ("u1", "m4") in run.qrels[0]
    assert run.failure_rate == pytest.approx(2 / 5)


def test_pipeline_records_unparseable_replies(tiny_truth, tiny_history, tiny_catalog):
    class Garbage(Backend):
        identity = "garbage"

        def judge(self, request):
            return parse_verdict("I refuse")

    run = judge_items([("u1", "m4")], Garbage(), tiny_history, tiny_catalog, repetitions=1)
    assert run.failures[0]["raw"] == "I refuse"


def test_pipeline_warm_cache_makes_no_calls(tiny_truth, tiny_history, tiny_catalog, tmp_path):
    pairs = [k for k, _ in tiny_truth.pairs()]
    first = SyntheticOracleBackend(tiny_truth, 2.0, seed=3)
    run1 = judge_items(pairs, first, tiny_history, tiny_catalog, cache=VerdictCache(tmp_path / "c"))
    second = SyntheticOracleBackend(tiny_truth, 2.0, seed=3)
    run2 = judge_items(pairs, second, tiny_history, tiny_catalog, cache=VerdictCache(tmp_path / "c"))
    assert run1.backend_calls == 15 and run2.backend_calls == 0 and second.calls == 0
    assert run1.qrels == run2.qrels
    replay = judge_items(pairs, ReplayCacheBackend("r"), tiny_history, tiny_catalog,
                         cache=VerdictCache(tmp_path / "c"))
    assert replay.qrels == run1.qrels


def test_replay_miss_is_a_failure(tiny_truth, tiny_history, tiny_catalog):
    run = judge_items([("u1", "m4")], ReplayCacheBackend("r"), tiny_history, tiny_catalog, repetitions=1)
    assert len(run.failures) == 1


def test_sum_aggregation_qrels_scale(tiny_truth, tiny_history, tiny_catalog):
    backend = SyntheticOracleBackend(tiny_truth, 0.0)
    run = judge_items([("u2", "m3")], backend, tiny_history, tiny_catalog, rubric="criteria",
                      aggregation="sum_aggregation", repetitions=1)
    assert run.qrels[0].max_grade == 77 and run.qrels[0]["u2", "m3"] > 7


def test_unexpected_exceptions_propagate(tiny_history, tiny_catalog):
    class Broken(Backend):
        def judge(self, request):
            raise RuntimeError("bug")

    with pytest.raises(RuntimeError):
        judge_items([("u1", "m4")], Broken(), tiny_history, tiny_catalog, repetitions=1)


# --- config and HTTP backend ----------------------------------------------------


def test_backend_config_file(tmp_path, tiny_truth):
    from recjudge.corpus import write_qrels

    write_qrels(tiny_truth, tmp_path / "t.qrels")
    (tmp_path / "b.ini").write_text(
        "[backend]\nkind = synthetic_oracle\nnoise_level = 1.5\nseed = 4\ntruth = t.qrels\n"
        "[llm]\nkind = http_chat\nendpoint_url = http://x\nmodel_name = m\nauth_env_var = KEY\n"
        "param.temperature = 0\nparam.stop = [\"\\n\"]\n"
    )
    cfg = load_backend_config(tmp_path / "b.ini")
    assert cfg.noise_level == 1.5 and cfg.truth == tiny_truth
    assert isinstance(make_backend(cfg), SyntheticOracleBackend)
    llm = load_backend_config(tmp_path / "b.ini", "llm")
    assert llm.params == {"temperature": 0, "stop": ["\n"]}
    (tmp_path / "bad.ini").write_text("[backend]\nkind = http_chat\napi_key = sk-123\n")
    with pytest.raises(ValidationError):
        load_backend_config(tmp_path / "bad.ini")
    with pytest.raises(ValidationError):
        BackendConfig(kind="telepathy")


class _ChatHandler(BaseHTTPRequestHandler):
    script: list = []
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((self.headers.get("Authorization"), body))
        status, content = type(self).script.pop(0) if type(self).script else (200, '{"interest_in_watching": 4}')
        payload = json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]}).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def chat_server():
    _ChatHandler.script, _ChatHandler.seen = [], []
    server = HTTPServer(("127.0.0.1", 0), _ChatHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions", _ChatHandler
    server.shutdown()


def test_http_backend_round_trip(chat_server, monkeypatch, tiny_history, tiny_catalog):
    url, handler = chat_server
    monkeypatch.setenv("JUDGE_KEY", "secret")
    cfg = BackendConfig(kind="http_chat", endpoint_url=url, model_name="m", auth_env_var="JUDGE_KEY",
                        params={"temperature": 0.0}, timeout=5)
    handler.script = [(503, ""), (429, ""), (200, 'ok {"reasoning": "r", "interest_in_watching": 6}')]
    run = judge_items([("u1", "m4")], HttpChatBackend(cfg), tiny_history, tiny_catalog, repetitions=1,
                      retry=NO_SLEEP)
    assert run.failures == [] and run.qrels[0]["u1", "m4"] == 6
    auth, body = handler.seen[-1]
    assert auth == "Bearer secret" and body["model"] == "m" and body["temperature"] == 0.0
    assert body["messages"][0]["role"] == "user" and "Movie recommendation:" in body["messages"][0]["content"]


def test_http_backend_hard_errors(chat_server, monkeypatch, tiny_history, tiny_catalog):
    url, handler = chat_server
    cfg = BackendConfig(kind="http_chat", endpoint_url=url, model_name="m", timeout=5)
    handler.script = [(401, "")]
    run = judge_items([("u1", "m4")], HttpChatBackend(cfg), tiny_history, tiny_catalog, repetitions=1,
                      retry=NO_SLEEP)
    assert len(handler.seen) == 1 and "HTTP 401" in run.failures[0]["error"]
    monkeypatch.delenv("MISSING_KEY", raising=False)
    cfg.auth_env_var = "MISSING_KEY"
    with pytest.raises(BackendError):
        HttpChatBackend(cfg).judge(
            JudgeRequest("u", "i", 0, render_prompt("p", tiny_catalog["m1"]), ProfileSpec()))


def test_http_connection_error_is_transient(tiny_catalog):
    cfg = BackendConfig(kind="http_chat", endpoint_url="http://127.0.0.1:9/none", timeout=1)
    with pytest.raises(TransientBackendError):
        HttpChatBackend(cfg).judge(JudgeRequest("u", "i", 0, render_prompt("p", tiny_catalog["m1"]), ProfileSpec()))

from __future__ import annotations

import json

import httpx
import pytest

from dedcons.extract import extract_variables_pattern
from dedcons.jsonl import MalformedRecord
from dedcons.graph import Style
from dedcons.mutate import build_prefix, instantiate, mutation_instances
from dedcons.runner import (
    AuthFailure,
    EndpointConfig,
    MalformedResponse,
    MockReasonerConfig,
    PrefillUnsupported,
    PromptBundle,
    RateLimited,
    ResponseStore,
    ServerError,
    StoredResponse,
    build_prompt,
    complete,
    mock_reason,
    request_body,
    run_dataset,
)
from dedcons.syndeduct import build_prefixed_instances, extract_paths


def ok_body(text: str = "The Computed value of x = 1\n#### 1") -> dict:
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def scripted_client(responses, seen=None) -> httpx.Client:
    """Client whose transport replays (status, body) pairs in order."""
    queue = list(responses)

    def handler(request: httpx.Request) -> httpx.Response:
        if seen is not None:
            seen.append(request)
        status, body = queue.pop(0)
        return httpx.Response(status, json=body) if isinstance(body, dict) else httpx.Response(status, text=body)

    return httpx.Client(transport=httpx.MockTransport(handler))


@pytest.fixture
def endpoint(monkeypatch) -> EndpointConfig:
    monkeypatch.setenv("TEST_KEY", "secret")
    return EndpointConfig(base_url="http://stub/v1", model_name="stub", api_key_env_var_name="TEST_KEY", max_retries=3)


@pytest.fixture
def appendix_instance(appendix_graph):
    path = next(p for p in extract_paths(appendix_graph, 24) if p.target == "Arvelo")
    return build_prefixed_instances(appendix_graph, path, max_prefixes=5)[0]


def bundle(prefill: str | None = "Answer: x") -> PromptBundle:
    return PromptBundle("system", "user", prefill, "i1")


def test_healthy_endpoint(endpoint):
    seen = []
    raw = complete(endpoint, bundle(), client=scripted_client([(200, ok_body())], seen))
    assert raw.text and raw.attempt_count == 1
    assert seen[0].url == "http://stub/v1/chat/completions"
    assert seen[0].headers["authorization"] == "Bearer secret"


def test_rate_limited_twice_then_ok(endpoint):
    sleeps = []
    client = scripted_client([(429, {"error": "slow"}), (429, {"error": "slow"}), (200, ok_body())])
    raw = complete(endpoint, bundle(), client=client, sleep=sleeps.append)
    assert raw.attempt_count == 3
    assert sleeps == [1.0, 2.0]


def test_retries_exhausted(endpoint):
    client = scripted_client([(503, "down")] * 4)
    with pytest.raises(ServerError) as err:
        complete(endpoint, bundle(), client=client, sleep=lambda s: None)
    assert err.value.attempt_count == 4


def test_retry_after_header_respected(endpoint):
    sleeps = []

    def handler(request):
        if not sleeps:
            return httpx.Response(429, headers={"retry-after": "7"}, text="")
        return httpx.Response(200, json=ok_body())

    client = httpx.Client(transport=httpx.MockTransport(handler))
    complete(endpoint, bundle(), client=client, sleep=sleeps.append)
    assert sleeps == [7.0]


def test_auth_failure_not_retried(endpoint):
    client = scripted_client([(401, "no")])
    with pytest.raises(AuthFailure):
        complete(endpoint, bundle(), client=client, sleep=lambda s: pytest.fail("no retry expected"))


def test_missing_key_is_auth_failure(monkeypatch):
    monkeypatch.delenv("ABSENT_KEY", raising=False)
    cfg = EndpointConfig(base_url="http://stub/v1", api_key_env_var_name="ABSENT_KEY")
    with pytest.raises(AuthFailure):
        complete(cfg, bundle(), client=scripted_client([]))


def test_malformed_body(endpoint):
    with pytest.raises(MalformedResponse):
        complete(endpoint, bundle(), client=scripted_client([(200, {"unexpected": True})]))
    with pytest.raises(MalformedResponse):
        complete(endpoint, bundle(), client=scripted_client([(400, "bad request")]))


def test_prefill_wire_shape(endpoint):
    body = request_body(endpoint, bundle("Answer: step one"))
    assert body["messages"][-1] == {"role": "assistant", "content": "Answer: step one"}
    assert body["continue_final_message"] is True
    assert body["add_generation_prompt"] is False
    plain = request_body(endpoint, bundle(None))
    assert [m["role"] for m in plain["messages"]] == ["system", "user"]
    assert "continue_final_message" not in plain


def test_prefill_unsupported(endpoint):
    cfg = EndpointConfig(**{**endpoint.to_dict(), "supports_prefill": False})
    with pytest.raises(PrefillUnsupported):
        complete(cfg, bundle(), client=scripted_client([]))


def test_rate_limited_is_retryable():
    assert RateLimited("x").retryable and ServerError("x").retryable and not AuthFailure("x").retryable


def test_syndeduct_prompt(appendix_instance, appendix_texts):
    b = build_prompt(appendix_instance)
    assert b.user_text == appendix_texts["document"]
    assert b.user_text.startswith("=== Graph Structure ===")
    assert b.user_text.endswith("What is the value of Arvelo?")
    assert b.assistant_prefill == appendix_texts["prefill"].rstrip(" ")
    assert '"add"' in b.system_text and "{ruleset}" not in b.system_text


def test_no_prefill_at_k0(appendix_graph):
    path = next(p for p in extract_paths(appendix_graph, 24) if p.target == "Arvelo")
    inst = build_prefixed_instances(appendix_graph, path, include_zero=True)[0]
    assert build_prompt(inst).assistant_prefill is None


def test_benchmark_prefill_is_first_two_steps(corpus):
    entry = next(e for e in corpus if e.problem_id == "yasna-books")
    problem = instantiate(entry.template, entry.program, {"pages_a": 60, "pages_b": 12, "weeks": 6})
    insts = mutation_instances(entry, 0, problem, [Style.ORIGINAL])
    k2 = next(i for i in insts if i.prefix_k == 2)
    b = build_prompt(k2)
    assert b.assistant_prefill == "Answer: " + build_prefix(problem, 2)
    assert b.user_text == "Question: " + problem.question
    k0 = next(i for i in insts if i.prefix_k == 0)
    assert build_prompt(k0).user_text.endswith("\nAnswer:")


def test_mock_oracle_exact(appendix_instance):
    raw = mock_reason(appendix_instance, MockReasonerConfig(p=0.0))
    got = extract_variables_pattern(raw.text, appendix_instance.per_variable_hops)
    assert got.values == {v: appendix_instance.ground_truth[v] for v in appendix_instance.per_variable_hops}
    assert got.final_answer == -32


def test_mock_p1_perturbs_every_step(appendix_instance):
    for mode in ("perturb-value", "propagate", "independent"):
        raw = mock_reason(appendix_instance, MockReasonerConfig(p=1.0, error_mode=mode))
        got = extract_variables_pattern(raw.text, appendix_instance.per_variable_hops)
        assert all(got.values[v] != appendix_instance.ground_truth[v] for v in got.values)


def test_mock_deterministic(appendix_instance):
    cfg = MockReasonerConfig(p=0.5, seed=9)
    assert mock_reason(appendix_instance, cfg).text == mock_reason(appendix_instance, cfg).text


def test_mock_config_validation():
    with pytest.raises(ValueError):
        MockReasonerConfig(p=1.5).validate()
    with pytest.raises(ValueError):
        MockReasonerConfig(error_mode="chaos").validate()


def test_independent_mode_binomial_law(appendix_graph):
    """Hop-2 correctness over many instance ids stays within 3 SE of (1 - p)^2."""
    path = next(p for p in extract_paths(appendix_graph, 24) if p.target == "Arvelo")
    base = build_prefixed_instances(appendix_graph, path, max_prefixes=1)[0]
    p, n = 0.3, 10000
    cfg = MockReasonerConfig(p=p, error_mode="independent", seed=1)
    var = next(v for v, h in base.per_variable_hops.items() if h == 2)
    hits = 0
    for i in range(n):
        base.instance_id = f"trial-{i}"
        text = mock_reason(base, cfg).text
        hits += extract_variables_pattern(text, [var]).values[var] == base.ground_truth[var]
    expected = (1 - p) ** 2
    se = (expected * (1 - expected) / n) ** 0.5
    assert abs(hits / n - expected) < 3 * se


def test_run_dataset_store_resume_and_errors(tmp_path, appendix_graph, endpoint):
    path = next(p for p in extract_paths(appendix_graph, 24) if p.target == "Arvelo")
    insts = build_prefixed_instances(appendix_graph, path, max_prefixes=3)
    store = ResponseStore(tmp_path / "responses.jsonl")
    summary = run_dataset(insts, store, "r1", mock=MockReasonerConfig())
    assert (summary.answered, summary.failed) == (3, 0)
    again = run_dataset(insts, store, "r1", mock=MockReasonerConfig())
    assert again.skipped == 3 and again.answered == 0
    assert [r.instance_id for r in store.records()] == [i.instance_id for i in insts]

    client = scripted_client([(401, "no")] * 3)
    failed = run_dataset(insts, store, "r2", endpoint=endpoint, client=client)
    assert failed.failed == 3 and failed.errors == {"AuthFailure": 3}
    assert store.answered("r2") == set()
    lines = (tmp_path / "responses.jsonl").read_text().splitlines()
    assert len(lines) == 6 and all(json.loads(line)["run_id"] in ("r1", "r2") for line in lines)


def test_run_dataset_needs_one_backend(tmp_path):
    with pytest.raises(ValueError):
        run_dataset([], ResponseStore(tmp_path / "s.jsonl"), "r")


def test_prompt_bundle_round_trip():
    b = bundle()
    assert PromptBundle.from_dict(b.to_dict()) == b


def test_store_tolerates_only_a_truncated_last_line(tmp_path):
    path = tmp_path / "store.jsonl"
    store = ResponseStore(path)
    store.append(StoredResponse("r", "i1", {}, "#### 1", "ok"))
    with open(path, "a", encoding="utf-8") as fh:
        fh.write('{"run_id": "r", "instance_id": "i2", "respo')
    assert [r.instance_id for r in store.records()] == ["i1"]
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("\n")
    store.append(StoredResponse("r", "i3", {}, "#### 3", "ok"))
    with pytest.raises(MalformedRecord, match="store.jsonl:2"):
        store.records()

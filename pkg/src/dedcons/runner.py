"""Prompt construction, chat-completion client, mock reasoner and the
append-only response store."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import httpx

from .graph import RuleSet, Style, builtin_ruleset
from .jsonl import MalformedRecord
from .instances import EvalInstance
from .numeric import render_value
from .seeding import derive_rng

log = logging.getLogger(__name__)

ANSWER_PREFIX = "Answer: "


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    return resources.files("dedcons.resources.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8").rstrip("\n")


def fill(text: str, /, **slots: str) -> str:
    """Replace ``{slot}`` markers; other braces (JSON examples) are left alone."""
    for key, value in slots.items():
        text = text.replace("{" + key + "}", value)
    return text


@dataclass(frozen=True)
class PromptTemplates:
    math_system: str = ""
    syndeduct_system: str = ""
    answer_prefix: str = ANSWER_PREFIX

    @classmethod
    def default(cls) -> PromptTemplates:
        return cls(math_system=load_prompt("math_system"), syndeduct_system=load_prompt("syndeduct_system"))


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    assistant_prefill: str | None = None
    instance_ref: str = ""

    def messages(self) -> list[dict]:
        msgs = [{"role": "system", "content": self.system_text}, {"role": "user", "content": self.user_text}]
        if self.assistant_prefill is not None:
            msgs.append({"role": "assistant", "content": self.assistant_prefill})
        return msgs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> PromptBundle:
        return cls(**data)


def ruleset_prompt_block(ruleset: RuleSet, style: Style | str = Style.ORIGINAL) -> str:
    style = Style(style)
    block = {
        op.name: {"function": op.function, "verbalization": op.graph_template(style)} for op in ruleset.operators
    }
    return json.dumps(block, indent=2)


def build_prompt(
    instance: EvalInstance,
    templates: PromptTemplates | None = None,
    ruleset: RuleSet | None = None,
) -> PromptBundle:
    """System/user text plus the "Answer: <prefix>" prefill when k >= 1."""
    templates = templates or PromptTemplates.default()
    prefill = templates.answer_prefix + instance.prefix_text if instance.prefix_k >= 1 else None
    if instance.source == "syndeduct":
        ruleset = ruleset or builtin_ruleset()
        system = fill(templates.syndeduct_system, ruleset=ruleset_prompt_block(ruleset, instance.style))
        user = instance.question_text
    else:
        system = templates.math_system
        user = f"Question: {instance.question_text}"
        if prefill is None:
            user += "\n" + templates.answer_prefix.rstrip()
    return PromptBundle(system, user, prefill, instance.instance_id)


# -- remote endpoint ----------------------------------------------------------


class EndpointError(RuntimeError):
    retryable = False


class Timeout(EndpointError):
    retryable = True


class RateLimited(EndpointError):
    retryable = True

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class ServerError(EndpointError):
    retryable = True


class AuthFailure(EndpointError):
    pass


class MalformedResponse(EndpointError):
    pass


class PrefillUnsupported(EndpointError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    model_name: str = "model"
    max_tokens: int = 1024
    temperature: float = 0.0
    request_timeout: float = 120.0
    max_retries: int = 5
    max_concurrency: int = 4
    api_key_env_var_name: str | None = "OPENAI_API_KEY"
    supports_prefill: bool = True
    continue_final_message: bool = True
    backoff_base: float = 1.0
    backoff_max: float = 30.0
    extra_body: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> EndpointConfig:
        return cls(**data)


@dataclass
class RawResponse:
    text: str
    latency: float = 0.0
    attempt_count: int = 1
    status: str = "ok"
    error: str | None = None


def _api_key(endpoint: EndpointConfig) -> str | None:
    name = endpoint.api_key_env_var_name
    if not name:
        return None
    key = os.environ.get(name)
    if not key:
        raise AuthFailure(f"environment variable {name} is not set")
    return key


def request_body(endpoint: EndpointConfig, bundle: PromptBundle) -> dict:
    body = {
        "model": endpoint.model_name,
        "messages": bundle.messages(),
        "max_tokens": endpoint.max_tokens,
        "temperature": endpoint.temperature,
    }
    if bundle.assistant_prefill is not None and endpoint.continue_final_message:
        # continue the trailing assistant turn instead of closing it
        body["continue_final_message"] = True
        body["add_generation_prompt"] = False
    body.update(endpoint.extra_body)
    return body


def _classify(resp: httpx.Response) -> EndpointError | None:
    code = resp.status_code
    if code in (401, 403):
        return AuthFailure(f"HTTP {code}")
    if code == 429:
        retry_after = resp.headers.get("retry-after")
        try:
            seconds = float(retry_after) if retry_after is not None else None
        except ValueError:
            seconds = None
        return RateLimited("HTTP 429", seconds)
    if code == 408 or code >= 500:
        return ServerError(f"HTTP {code}")
    if code >= 400:
        return MalformedResponse(f"HTTP {code}: {resp.text[:200]}")
    return None


def _parse_completion(resp: httpx.Response) -> str:
    try:
        payload = resp.json()
        choice = payload["choices"][0]
        text = choice["message"]["content"] if "message" in choice else choice["text"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"unexpected response body: {exc!r}") from None
    if not isinstance(text, str):
        raise MalformedResponse("completion content is not text")
    return text


def complete(
    endpoint: EndpointConfig,
    bundle: PromptBundle,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> RawResponse:
    """One chat completion with exponential backoff on timeouts, 429 and 5xx."""
    if bundle.assistant_prefill is not None and not endpoint.supports_prefill:
        raise PrefillUnsupported(f"{endpoint.model_name} does not accept an assistant prefill")
    headers = {"Content-Type": "application/json"}
    key = _api_key(endpoint)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    body = request_body(endpoint, bundle)
    own_client = client is None
    client = client or httpx.Client(timeout=endpoint.request_timeout)
    start = time.monotonic()
    attempt = 0
    try:
        while True:
            attempt += 1
            try:
                resp = client.post(url, json=body, headers=headers, timeout=endpoint.request_timeout)
                error = _classify(resp)
            except httpx.TimeoutException as exc:
                error = Timeout(f"timed out: {exc}")
            except httpx.TransportError as exc:
                error = ServerError(f"transport error: {exc}")
            if error is None:
                text = _parse_completion(resp)
                return RawResponse(text=text, latency=time.monotonic() - start, attempt_count=attempt)
            if not error.retryable or attempt > endpoint.max_retries:
                error.attempt_count = attempt
                raise error
            delay = min(endpoint.backoff_max, endpoint.backoff_base * 2 ** (attempt - 1))
            if isinstance(error, RateLimited) and error.retry_after is not None:
                delay = min(endpoint.backoff_max, max(delay, error.retry_after))
            log.debug("%s: %s, retrying in %.2fs", bundle.instance_ref, error, delay)
            sleep(delay)
    finally:
        if own_client:
            client.close()


# -- mock reasoner --------------------------------------------------------------

ERROR_MODES = ("perturb-value", "propagate", "independent")


@dataclass(frozen=True)
class MockReasonerConfig:
    """Reference-following reasoner with a known per-step error rate ``p``.

    perturb-value: each step is wrong with probability p, independently.
    propagate: the first wrong step makes every later step wrong too.
    independent: a variable at hop l is right only if l independent
        per-hop checks (each failing with probability p) all pass, drawn
        separately for every variable.
    """

    p: float = 0.0
    error_mode: str = "perturb-value"
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be in [0, 1]")
        if self.error_mode not in ERROR_MODES:
            raise ValueError(f"error_mode must be one of {ERROR_MODES}")


def _corrupt(rng, value: Fraction) -> Fraction:
    magnitude = abs(value) / 5 + 1
    return value + rng.choice((-1, 1)) * magnitude * rng.randint(1, 9)


def mock_reason(instance: EvalInstance, cfg: MockReasonerConfig) -> RawResponse:
    """Continue the reference solution, one "Computed value" line per post-prefix variable."""
    cfg.validate()
    rng = derive_rng(cfg.seed, "mock", instance.instance_id)
    order = {name: i for i, name in enumerate(instance.per_variable_hops)}
    steps = sorted(instance.per_variable_hops.items(), key=lambda kv: (kv[1], order[kv[0]]))
    broken = False
    emitted: dict[str, Fraction] = {}
    lines = []
    for name, hop in steps:
        truth = instance.ground_truth[name]
        if cfg.error_mode == "perturb-value":
            wrong = rng.random() < cfg.p
        elif cfg.error_mode == "propagate":
            broken = broken or rng.random() < cfg.p
            wrong = broken
        else:
            wrong = any(rng.random() < cfg.p for _ in range(hop))
        value = _corrupt(rng, truth) if wrong else truth
        emitted[name] = value
        lines.append(f"The Computed value of {name} = {render_value(value)}")
    final = emitted.get(instance.target, instance.final_answer)
    lines.append(f"#### {render_value(final)}")
    return RawResponse(text="\n".join(lines), latency=0.0, attempt_count=1)


# -- response store -------------------------------------------------------------


@dataclass
class StoredResponse:
    run_id: str
    instance_id: str
    prompt: dict
    text: str | None
    status: str
    error: str | None = None
    attempt_count: int = 0
    latency: float = 0.0
    backend: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> StoredResponse:
        return cls(**{k: data.get(k) for k in cls.__dataclass_fields__ if k in data})


class ResponseStore:
    """Append-only JSONL keyed by (run_id, instance_id); the last record for a key wins."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def records(self) -> list[StoredResponse]:
        if not self.path.exists():
            return []
        latest: dict[tuple[str, str], StoredResponse] = {}
        with open(self.path, encoding="utf-8") as fh:
            lines = fh.readlines()
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                # an interrupted append leaves a partial last line; the instance is simply re-asked
                if lineno == len(lines) and not line.endswith("\n"):
                    log.warning("%s: ignoring truncated last line", self.path)
                    continue
                raise MalformedRecord(f"{self.path}:{lineno}: {exc.msg}") from None
            rec = StoredResponse.from_dict(data)
            latest[(rec.run_id, rec.instance_id)] = rec
        return list(latest.values())

    def answered(self, run_id: str) -> set[str]:
        return {r.instance_id for r in self.records() if r.run_id == run_id and r.status == "ok"}

    def append(self, rec: StoredResponse) -> None:
        line = json.dumps(rec.to_dict(), sort_keys=True, ensure_ascii=False)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


@dataclass
class RunSummary:
    total: int = 0
    answered: int = 0
    skipped: int = 0
    failed: int = 0
    errors: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def run_dataset(
    instances: Sequence[EvalInstance],
    store: ResponseStore,
    run_id: str,
    *,
    endpoint: EndpointConfig | None = None,
    mock: MockReasonerConfig | None = None,
    templates: PromptTemplates | None = None,
    ruleset: RuleSet | None = None,
    overwrite: bool = False,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> RunSummary:
    """Answer every instance with the endpoint or the mock; records are appended in dataset order."""
    if (endpoint is None) == (mock is None):
        raise ValueError("exactly one of endpoint and mock is required")
    templates = templates or PromptTemplates.default()
    done = set() if overwrite else store.answered(run_id)
    todo = [inst for inst in instances if inst.instance_id not in done]
    summary = RunSummary(total=len(instances), skipped=len(instances) - len(todo))

    def answer(inst: EvalInstance) -> StoredResponse:
        bundle = build_prompt(inst, templates, ruleset)
        backend = "mock" if mock else endpoint.model_name
        try:
            if mock is not None:
                raw = mock_reason(inst, mock)
            else:
                raw = complete(endpoint, bundle, client=client, sleep=sleep)
        except EndpointError as exc:
            return StoredResponse(
                run_id, inst.instance_id, bundle.to_dict(), None, "error",
                f"{type(exc).__name__}: {exc}", getattr(exc, "attempt_count", 1), 0.0, backend,
            )
        return StoredResponse(
            run_id, inst.instance_id, bundle.to_dict(), raw.text, "ok", None, raw.attempt_count, raw.latency, backend
        )

    workers = 1 if mock is not None else endpoint.max_concurrency
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for rec in pool.map(answer, todo):
            store.append(rec)
            if rec.status == "ok":
                summary.answered += 1
            else:
                summary.failed += 1
                kind = rec.error.split(":", 1)[0]
                summary.errors[kind] = summary.errors.get(kind, 0) + 1
    return summary


def iter_texts(records: Iterable[StoredResponse]) -> Iterable[tuple[str, str]]:
    for rec in records:
        if rec.status == "ok" and rec.text is not None:
            yield rec.instance_id, rec.text

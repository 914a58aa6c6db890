"""Turn stored responses into per-variable correctness records."""

from __future__ import annotations

import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .extract import (
    ExtractedAssignment,
    ExtractionCache,
    extract_final_answer,
    extract_variables_lm,
    extract_variables_pattern,
    values_match,
)
from .instances import EvalInstance
from .metrics import EvalRecord
from .numeric import decode_value, encode_value
from .runner import EndpointError, StoredResponse

log = logging.getLogger(__name__)

_STATED_NAME = re.compile(r"value of\s+([A-Za-z_][\w'-]*)\s*=", re.IGNORECASE)


@dataclass
class ScoredInstance:
    instance_id: str
    problem_id: str
    run_id: str
    source: str
    style: str
    prefix_k: int
    mutation_id: int
    status: str
    backend: str = ""
    final_predicted: Fraction | None = None
    final_reference: Fraction | None = None
    final_correct: bool = False
    reference_vars: list[str] = field(default_factory=list)
    stated_reference: list[str] = field(default_factory=list)
    stated_all: list[str] = field(default_factory=list)
    conflicts: list[str] = field(default_factory=list)
    malformed: bool = False
    error: str | None = None
    records: list[EvalRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "problem_id": self.problem_id,
            "run_id": self.run_id,
            "source": self.source,
            "style": self.style,
            "prefix_k": self.prefix_k,
            "mutation_id": self.mutation_id,
            "status": self.status,
            "backend": self.backend,
            "final_predicted": None if self.final_predicted is None else encode_value(self.final_predicted),
            "final_reference": None if self.final_reference is None else encode_value(self.final_reference),
            "final_correct": self.final_correct,
            "reference_vars": self.reference_vars,
            "stated_reference": self.stated_reference,
            "stated_all": self.stated_all,
            "conflicts": self.conflicts,
            "malformed": self.malformed,
            "error": self.error,
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ScoredInstance:
        dec = lambda v: None if v is None else decode_value(v)  # noqa: E731
        return cls(
            instance_id=d["instance_id"],
            problem_id=d["problem_id"],
            run_id=d["run_id"],
            source=d["source"],
            style=d["style"],
            prefix_k=int(d["prefix_k"]),
            mutation_id=int(d["mutation_id"]),
            status=d["status"],
            backend=d.get("backend", ""),
            final_predicted=dec(d.get("final_predicted")),
            final_reference=dec(d.get("final_reference")),
            final_correct=bool(d.get("final_correct", False)),
            reference_vars=list(d.get("reference_vars", [])),
            stated_reference=list(d.get("stated_reference", [])),
            stated_all=list(d.get("stated_all", [])),
            conflicts=list(d.get("conflicts", [])),
            malformed=bool(d.get("malformed", False)),
            error=d.get("error"),
            records=[EvalRecord.from_dict(r) for r in d.get("records", [])],
        )


def stated_variables(text: str) -> list[str]:
    """Every name the text assigns a value to, in order of first appearance."""
    return list(dict.fromkeys(_STATED_NAME.findall(text or "")))


def _extract(
    inst: EvalInstance,
    full_text: str,
    backend: str,
    endpoint,
    cache: ExtractionCache | None,
    send,
) -> ExtractedAssignment:
    variables = list(inst.per_variable_hops)
    use_lm = backend == "lm" or (backend == "auto" and inst.source == "benchmark" and endpoint is not None)
    if use_lm:
        if endpoint is None:
            raise ValueError("the lm extraction backend needs an endpoint")
        try:
            got = extract_variables_lm(
                full_text,
                variables,
                inst.explanations,
                endpoint,
                question=inst.question_text,
                cache=cache,
                send=send,
            )
            if not got.malformed:
                return got
            log.info("%s: malformed extractor output, falling back to patterns", inst.instance_id)
        except EndpointError as exc:
            if backend == "lm":
                raise
            log.info("%s: extractor call failed (%s), falling back to patterns", inst.instance_id, exc)
    return extract_variables_pattern(full_text, variables)


def score_instance(
    inst: EvalInstance,
    response: StoredResponse | None,
    *,
    backend: str = "auto",
    endpoint=None,
    cache: ExtractionCache | None = None,
    send=None,
    rel_tol: float = 0.05,
    run_id: str = "",
) -> ScoredInstance:
    base = dict(
        instance_id=inst.instance_id,
        problem_id=inst.problem_id,
        run_id=response.run_id if response else run_id,
        source=inst.source,
        style=inst.style,
        prefix_k=inst.prefix_k,
        mutation_id=inst.mutation_id,
        final_reference=inst.final_answer,
        reference_vars=list(inst.per_variable_hops),
    )
    if response is None or response.status != "ok" or response.text is None:
        error = "no response" if response is None else response.error
        return ScoredInstance(status="unscored", error=error, **base)

    prefill = (response.prompt or {}).get("assistant_prefill") or ""
    full_text = prefill + response.text
    try:
        got = _extract(inst, full_text, backend, endpoint, cache, send)
    except EndpointError as exc:
        return ScoredInstance(status="unscored", error=f"extractor: {exc}", **base)

    final = extract_final_answer(response.text)
    records = []
    for name, hop in inst.per_variable_hops.items():
        predicted = got.values.get(name)
        reference = inst.ground_truth[name]
        records.append(
            EvalRecord(
                problem_id=inst.problem_id,
                prefix_k=inst.prefix_k,
                variable=name,
                hop=hop,
                predicted=predicted,
                reference=reference,
                correct=values_match(predicted, reference, rel_tol),
                is_target=name == inst.target,
                mutation_id=inst.mutation_id,
                instance_id=inst.instance_id,
            )
        )
    stated_all = stated_variables(response.text) if got.backend == "pattern" else sorted(got.stated())
    return ScoredInstance(
        status="scored",
        backend=got.backend,
        final_predicted=final,
        final_correct=values_match(final, inst.final_answer, rel_tol),
        stated_reference=[v for v in inst.per_variable_hops if got.values.get(v) is not None],
        stated_all=stated_all,
        conflicts=list(got.conflicts),
        malformed=got.malformed,
        records=records,
        **base,
    )


def score_responses(
    instances: Sequence[EvalInstance],
    responses: Iterable[StoredResponse],
    *,
    run_id: str | None = None,
    backend: str = "auto",
    endpoint=None,
    cache: ExtractionCache | None = None,
    send=None,
    rel_tol: float = 0.05,
) -> list[ScoredInstance]:
    """Score every instance, in dataset order, against the latest stored response for it."""
    if backend not in ("auto", "pattern", "lm"):
        raise ValueError(f"unknown extraction backend {backend!r}")
    latest: dict[str, StoredResponse] = {}
    for rec in responses:
        if run_id is None or rec.run_id == run_id:
            latest[rec.instance_id] = rec
    return [
        score_instance(
            inst,
            latest.get(inst.instance_id),
            backend=backend,
            endpoint=endpoint,
            cache=cache,
            send=send,
            rel_tol=rel_tol,
            run_id=run_id or "",
        )
        for inst in instances
    ]


def flatten_records(scored: Iterable[ScoredInstance]) -> list[EvalRecord]:
    return [r for s in scored if s.status == "scored" for r in s.records]


def coverage_items(scored: Iterable[ScoredInstance]) -> list[tuple[list[str], list[str], list[str]]]:
    return [(s.reference_vars, s.stated_reference, s.stated_all) for s in scored if s.status == "scored"]


def problem_accuracies(scored: Iterable[ScoredInstance]) -> dict[str, float]:
    """Final-answer accuracy per problem over its mutations, at the shortest prefix scored."""
    by_problem: dict[str, list[ScoredInstance]] = defaultdict(list)
    for s in scored:
        if s.status == "scored":
            by_problem[s.problem_id].append(s)
    out = {}
    for pid, items in sorted(by_problem.items()):
        k_min = min(s.prefix_k for s in items)
        chosen = [s for s in items if s.prefix_k == k_min]
        out[pid] = sum(s.final_correct for s in chosen) / len(chosen)
    return out

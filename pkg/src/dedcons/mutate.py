"""Perturbed-benchmark pipeline: templates, straight-line reference programs,
sanity checks, value mutation and instantiation of mutated questions/CoTs."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .graph import SEMANTICS, ComputationGraph, GraphError, Node, RuleSet, Style, builtin_ruleset, evaluate_graph
from .instances import EvalInstance
from .jsonl import read_jsonl
from .numeric import Number, decode_value, encode_value, render_value, to_fraction
from .seeding import derive_rng

log = logging.getLogger(__name__)

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_MAX_DECIMALS = 6


class TemplateError(ValueError):
    pass


class MissingPlaceholder(TemplateError):
    def __init__(self, name: str):
        super().__init__(f"no value for placeholder {name!r}")
        self.name = name


class OutOfRange(ValueError):
    pass


class MutationFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class ProblemTemplate:
    templatized_question: str
    templatized_answer: tuple[str, ...]
    factual_assignment: dict[str, Fraction]
    node_explanation: dict[str, str] = field(default_factory=dict)
    question_vars: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, data: Mapping, default_question_vars: Sequence[str] = ()) -> ProblemTemplate:
        factual = {}
        for key, value in data["factual_assignment"].items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TemplateError(f"factual value for {key!r} is not numeric: {value!r}")
            factual[key] = to_fraction(value)
        qvars = data.get("question_vars") or default_question_vars
        if not qvars:
            qvars = [
                name
                for name in dict.fromkeys(_PLACEHOLDER.findall(data["templatized_question"]))
                if name in factual
            ]
        return cls(
            templatized_question=data["templatized_question"],
            templatized_answer=tuple(data["templatized_answer"]),
            factual_assignment=factual,
            node_explanation=dict(data.get("node_explanation", {})),
            question_vars=tuple(qvars),
        )

    def to_dict(self) -> dict:
        return {
            "templatized_question": self.templatized_question,
            "templatized_answer": list(self.templatized_answer),
            "factual_assignment": {k: _json_number(v) for k, v in self.factual_assignment.items()},
            "node_explanation": dict(self.node_explanation),
            "question_vars": list(self.question_vars),
        }

    def placeholders(self) -> list[str]:
        texts = [self.templatized_question, *self.templatized_answer]
        return list(dict.fromkeys(name for t in texts for name in _PLACEHOLDER.findall(t)))


def _json_number(value: Fraction) -> int | float:
    return value.numerator if value.denominator == 1 else float(value)


@dataclass(frozen=True)
class Statement:
    out: str
    op: str
    args: tuple[str | Fraction, ...]


@dataclass(frozen=True)
class ReferenceProgram:
    """Straight-line, single-assignment arithmetic over named inputs and literals."""

    inputs: tuple[str, ...]
    statements: tuple[Statement, ...]

    @property
    def outputs(self) -> list[str]:
        return [s.out for s in self.statements]

    @property
    def final_output(self) -> str:
        return self.statements[-1].out

    def variables(self) -> set[str]:
        return set(self.inputs) | set(self.outputs)

    def check(self) -> None:
        if not self.statements:
            raise TemplateError("program has no statements")
        defined = set(self.inputs)
        if len(defined) != len(self.inputs):
            raise TemplateError("duplicate program input")
        for st in self.statements:
            if st.op not in SEMANTICS:
                raise TemplateError(f"unsupported operator {st.op!r}")
            if len(st.args) != SEMANTICS[st.op][0]:
                raise TemplateError(f"{st.out}: {st.op} takes {SEMANTICS[st.op][0]} operands")
            for arg in st.args:
                if isinstance(arg, str) and arg not in defined:
                    raise TemplateError(f"{st.out}: operand {arg!r} is not defined before use")
            if st.out in defined:
                raise TemplateError(f"{st.out!r} is assigned twice")
            defined.add(st.out)

    def to_graph(self, assignment: Mapping[str, Number]) -> ComputationGraph:
        nodes = []
        for name in self.inputs:
            if name not in assignment:
                raise MissingPlaceholder(name)
            nodes.append(Node.input(name, assignment[name]))
        n_lit = 0
        for st in self.statements:
            parents = []
            for arg in st.args:
                if isinstance(arg, str):
                    parents.append(arg)
                else:
                    lit = f"__literal{n_lit}"
                    n_lit += 1
                    nodes.append(Node.input(lit, arg))
                    parents.append(lit)
            nodes.append(Node.derived(st.out, st.op, parents))
        return ComputationGraph(tuple(nodes))

    def run(self, assignment: Mapping[str, Number]) -> dict[str, Fraction]:
        """Execute with the graph interpreter; literal helper nodes are dropped."""
        self.check()
        values = evaluate_graph(self.to_graph(assignment))
        return {k: v for k, v in values.items() if not k.startswith("__literal")}

    @classmethod
    def from_dict(cls, data: Mapping) -> ReferenceProgram:
        statements = []
        for raw in data["statements"]:
            args = tuple(a if isinstance(a, str) else to_fraction(a) for a in raw["args"])
            statements.append(Statement(out=raw["out"], op=raw["op"], args=args))
        return cls(inputs=tuple(data["inputs"]), statements=tuple(statements))

    def to_dict(self) -> dict:
        return {
            "inputs": list(self.inputs),
            "statements": [
                {"out": s.out, "op": s.op, "args": [a if isinstance(a, str) else _json_number(a) for a in s.args]}
                for s in self.statements
            ],
        }


@dataclass
class CorpusEntry:
    problem_id: str
    template: ProblemTemplate
    program: ReferenceProgram
    answer: Fraction | None = None
    provenance: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping) -> CorpusEntry:
        program = ReferenceProgram.from_dict(data["program"])
        answer = data.get("answer")
        return cls(
            problem_id=str(data["problem_id"]),
            template=ProblemTemplate.from_dict(data["template"], program.inputs),
            program=program,
            answer=None if answer is None else to_fraction(answer),
            provenance=dict(data.get("provenance", {})),
        )

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "template": self.template.to_dict(),
            "program": self.program.to_dict(),
            "answer": None if self.answer is None else _json_number(self.answer),
            "provenance": dict(self.provenance),
        }


@dataclass(frozen=True)
class SamplerConfig:
    min_value: int = 1
    max_value: int = 100
    max_iter: int = 100
    mutations_per_problem: int = 10
    seed: int = 0

    def validate(self) -> None:
        if not self.min_value < self.max_value:
            raise ValueError("min_value must be < max_value")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.mutations_per_problem < 0:
            raise ValueError("mutations_per_problem must be >= 0")


@dataclass
class SanityReport:
    problem_id: str
    checks: dict[str, bool] = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return bool(self.checks) and all(self.checks.values())

    def fail(self, check: str, message: str) -> None:
        self.checks[check] = False
        self.messages.append(f"{check}: {message}")

    def to_dict(self) -> dict:
        return {"problem_id": self.problem_id, "ok": self.ok, "checks": self.checks, "messages": self.messages}


def _same_value(a: Fraction, b: Fraction) -> bool:
    # exact, or equal at the rendered precision (recorded factual values are rounded)
    return a == b or render_value(a) == render_value(b)


def substitute(text: str, values: Mapping[str, Number]) -> str:
    def repl(match: re.Match) -> str:
        name = match.group(1)
        if name not in values:
            raise MissingPlaceholder(name)
        return render_value(values[name])

    return _PLACEHOLDER.sub(repl, text)


def validate_template(
    template: ProblemTemplate,
    program: ReferenceProgram,
    answer: Number | None = None,
    problem_id: str = "",
) -> SanityReport:
    """Run the sanity checks; failures are recorded, never raised."""
    report = SanityReport(problem_id)

    try:
        program.check()
        if not template.templatized_answer:
            raise TemplateError("empty templatized answer")
        if set(template.question_vars) != set(program.inputs):
            raise TemplateError("question variables and program inputs differ")
        report.checks["format"] = True
    except TemplateError as exc:
        report.fail("format", str(exc))

    missing = [v for v in template.factual_assignment if v not in program.variables()]
    report.checks["variables_in_program"] = not missing
    if missing:
        report.fail("variables_in_program", f"not in program: {missing}")

    values: dict[str, Fraction] | None = None
    try:
        values = program.run({v: template.factual_assignment[v] for v in program.inputs})
    except (KeyError, MissingPlaceholder, TemplateError, GraphError) as exc:
        report.fail("program_consistent", f"program does not execute: {exc}")
    if values is not None:
        bad = [
            v
            for v, fact in template.factual_assignment.items()
            if v in values and not _same_value(values[v], fact)
        ]
        report.checks["program_consistent"] = not bad
        if bad:
            report.fail("program_consistent", f"values disagree with factual assignment: {bad}")

    filled = dict(template.factual_assignment)
    if values is not None:
        filled = {**values, **filled}
    try:
        for text in (template.templatized_question, *template.templatized_answer):
            substitute(text, filled)
        report.checks["placeholders_filled"] = True
    except MissingPlaceholder as exc:
        report.fail("placeholders_filled", str(exc))

    if answer is None:
        report.fail("final_answer", "no recorded answer")
    elif values is None:
        report.fail("final_answer", "program did not execute")
    else:
        got = values[program.final_output]
        report.checks["final_answer"] = _same_value(got, to_fraction(answer))
        if not report.checks["final_answer"]:
            report.fail("final_answer", f"program gives {render_value(got)}, recorded {render_value(answer)}")
    return report


def _decimals(value: Fraction) -> int:
    text = render_value(value)
    return min(_MAX_DECIMALS, len(text.split(".")[1])) if "." in text else 0


def _draw(rng, factual: Fraction, lo: int, hi: int) -> Fraction:
    if factual.denominator == 1:
        return Fraction(rng.randint(lo, hi))
    places = max(1, _decimals(factual))
    if 0 < factual < 1:
        while True:
            x = Fraction(round(rng.random(), places)).limit_denominator(10**places)
            if 0 < x < 1:
                return x
    return Fraction(round(rng.uniform(lo, hi), places)).limit_denominator(10**places)


def sample_mutation(
    template: ProblemTemplate,
    program: ReferenceProgram,
    cfg: SamplerConfig,
    problem_id: str = "",
    index: int = 0,
) -> dict[str, Fraction]:
    """New values for the question variables, resampled until every program value is non-negative.

    Draws per attempt, in program-input order: integer factual values get a
    uniform integer in [min, max]; values in (0, 1) a uniform real in (0, 1);
    other reals a uniform real in [min, max], rounded to the factual value's
    decimal places. After ``max_iter`` attempts the last executable candidate
    is accepted.
    """
    rng = derive_rng(cfg.seed, problem_id, index)
    last: dict[str, Fraction] | None = None
    for _ in range(cfg.max_iter):
        candidate = {
            v: _draw(rng, template.factual_assignment[v], cfg.min_value, cfg.max_value) for v in program.inputs
        }
        try:
            values = program.run(candidate)
        except GraphError:
            continue
        last = candidate
        if all(x >= 0 for x in values.values()):
            return candidate
    if last is None:
        raise MutationFailed(f"{problem_id}: no executable assignment in {cfg.max_iter} attempts")
    return last


@dataclass
class MutatedProblem:
    template: ProblemTemplate
    program: ReferenceProgram
    values: dict[str, Fraction]
    question: str
    steps: list[str]
    final_answer: Fraction

    def first_steps(self) -> dict[str, int]:
        """1-based index of the answer step where each program output first appears."""
        out = {}
        outputs = set(self.program.outputs)
        for i, text in enumerate(self.template.templatized_answer, start=1):
            for name in _PLACEHOLDER.findall(text):
                if name in outputs and name not in out:
                    out[name] = i
        return out

    def styled_steps(self, style: Style | str = Style.ORIGINAL, ruleset: RuleSet | None = None) -> list[str]:
        style = Style(style)
        if style is Style.ORIGINAL:
            return list(self.steps)
        ruleset = ruleset or builtin_ruleset("full")
        by_step: dict[int, list[Statement]] = {}
        first = self.first_steps()
        for st in self.program.statements:
            if st.out in first:
                by_step.setdefault(first[st.out], []).append(st)
        styled = []
        for i, text in enumerate(self.steps, start=1):
            if i not in by_step:
                styled.append(text)
                continue
            styled.append(" ".join(self._restyle(st, style, ruleset) for st in by_step[i]))
        return styled

    def _restyle(self, st: Statement, style: Style, ruleset: RuleSet) -> str:
        op = ruleset.by_semantics(st.op)
        template = op.step_templates[style.value]
        what = self.template.node_explanation.get(st.out) or st.out.replace("_", " ")
        what = what.rstrip(".")
        slots = {
            "result": render_value(self.values[st.out]),
            "what": what[:1].lower() + what[1:],
            "What": what[:1].upper() + what[1:],
        }
        for slot, arg in zip("ab", st.args):
            slots[slot] = render_value(self.values[arg] if isinstance(arg, str) else arg)
        return _PLACEHOLDER.sub(lambda m: slots[m.group(1)], template)


def instantiate(
    template: ProblemTemplate, program: ReferenceProgram, assignment: Mapping[str, Number]
) -> MutatedProblem:
    """Run the program on ``assignment`` and fill every placeholder."""
    missing = [v for v in program.inputs if v not in assignment]
    if missing:
        raise MissingPlaceholder(missing[0])
    values = program.run({v: assignment[v] for v in program.inputs})
    question = substitute(template.templatized_question, values)
    steps = [substitute(s, values) for s in template.templatized_answer]
    return MutatedProblem(
        template=template,
        program=program,
        values=values,
        question=question,
        steps=steps,
        final_answer=values[program.final_output],
    )


def build_prefix(
    problem: MutatedProblem, k: int, style: Style | str = Style.ORIGINAL, ruleset: RuleSet | None = None
) -> str:
    """The first ``k`` answer steps, restyled, one per line."""
    if not 0 <= k <= len(problem.steps):
        raise OutOfRange(f"prefix length {k} outside 0..{len(problem.steps)}")
    if k == 0:
        return ""
    return "\n".join(problem.styled_steps(style, ruleset)[:k])


def variable_hops(problem: MutatedProblem, k: int) -> dict[str, int]:
    """Hop offsets for program outputs first computed after the first ``k`` steps.

    The hop is the rank of the step that introduces the variable among the
    post-prefix steps that introduce any variable; the final output counts as
    introduced by the last step when no step mentions it.
    """
    first = problem.first_steps()
    first.setdefault(problem.program.final_output, len(problem.steps))
    post = {v: s for v, s in first.items() if s > k}
    ranks = {s: r for r, s in enumerate(sorted(set(post.values())), start=1)}
    order = {v: i for i, v in enumerate(problem.program.outputs)}
    return {v: ranks[post[v]] for v in sorted(post, key=lambda v: (post[v], order[v]))}


def mutation_instances(
    entry: CorpusEntry,
    mutation_id: int,
    problem: MutatedProblem,
    styles: Sequence[Style | str] = (Style.ORIGINAL,),
    ruleset: RuleSet | None = None,
) -> list[EvalInstance]:
    out = []
    explanations = {v: entry.template.node_explanation.get(v, v) for v in problem.values}
    for style in styles:
        style = Style(style)
        for k in range(0, len(problem.steps)):
            hops = variable_hops(problem, k)
            if not hops:
                continue
            out.append(
                EvalInstance(
                    instance_id=f"{entry.problem_id}:m{mutation_id}:k{k}:{style.value}",
                    problem_id=entry.problem_id,
                    mutation_id=mutation_id,
                    source="benchmark",
                    question_text=problem.question,
                    target=problem.program.final_output,
                    prefix_k=k,
                    hop_total=max(hops.values()),
                    per_variable_hops=hops,
                    ground_truth=dict(problem.values),
                    final_answer=problem.final_answer,
                    style=style.value,
                    prefix_text=build_prefix(problem, k, style, ruleset),
                    explanations=explanations,
                )
            )
    return out


@dataclass
class MutationRecord:
    problem_id: str
    mutation_id: int
    assignment: dict[str, Fraction]
    question: str
    steps: list[str]
    final_answer: Fraction

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "mutation_id": self.mutation_id,
            "assignment": {k: encode_value(v) for k, v in self.assignment.items()},
            "question": self.question,
            "steps": self.steps,
            "final_answer": encode_value(self.final_answer),
        }


def mutate_corpus(
    entries: Iterable[CorpusEntry],
    cfg: SamplerConfig,
    styles: Sequence[Style | str] = (Style.ORIGINAL,),
    ruleset: RuleSet | None = None,
) -> tuple[list[EvalInstance], list[MutationRecord], list[SanityReport]]:
    """Filter by sanity checks, then sample and instantiate mutations per problem."""
    cfg.validate()
    ruleset = ruleset or builtin_ruleset("full")
    instances: list[EvalInstance] = []
    mutations: list[MutationRecord] = []
    reports: list[SanityReport] = []
    for entry in entries:
        report = validate_template(entry.template, entry.program, entry.answer, entry.problem_id)
        reports.append(report)
        if not report.ok:
            log.info("dropping %s: %s", entry.problem_id, "; ".join(report.messages))
            continue
        for j in range(cfg.mutations_per_problem):
            assignment = sample_mutation(entry.template, entry.program, cfg, entry.problem_id, j)
            problem = instantiate(entry.template, entry.program, assignment)
            mutations.append(
                MutationRecord(entry.problem_id, j, assignment, problem.question, problem.steps, problem.final_answer)
            )
            instances.extend(mutation_instances(entry, j, problem, styles, ruleset))
    return instances, mutations, reports


def shared_problem_ids(collections: Sequence[Iterable[Mapping]]) -> set[str]:
    """Problem ids present in every collection (per-model support sets)."""
    sets = [{str(rec["problem_id"]) for rec in coll} for coll in collections]
    return set.intersection(*sets) if sets else set()


def load_corpus(path: str | None = None) -> list[CorpusEntry]:
    """Corpus entries from a JSONL file, or the shipped validated templates when no path is given."""
    if path:
        rows = list(read_jsonl(path))
    else:
        text = resources.files("dedcons.resources").joinpath("templates.jsonl").read_text(encoding="utf-8")
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    return [CorpusEntry.from_dict(r) for r in rows]


def decode_assignment(raw: Mapping[str, int | str]) -> dict[str, Fraction]:
    return {k: decode_value(v) for k, v in raw.items()}

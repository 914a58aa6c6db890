"""Computation graphs: operator rule sets, exact evaluation and verbalization.

A graph is an ordered list of nodes in topological order. Input nodes carry a
value; derived nodes carry an operator name and parent names. Operator
semantics come from a closed built-in vocabulary; the ``function`` string that
rule-set files may carry is documentation only and is never evaluated.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from importlib import resources
from pathlib import Path as FsPath
from typing import Callable, Iterable, Mapping

from .numeric import Number, encode_value, render_value, to_fraction


class GraphError(ValueError):
    pass


class DivisionByZero(GraphError):
    def __init__(self, node: str):
        super().__init__(f"division by zero at node {node!r}")
        self.node = node


class DanglingParent(GraphError):
    def __init__(self, node: str, parent: str | None = None):
        detail = f" (parent {parent!r})" if parent else ""
        super().__init__(f"node {node!r} references a missing or later parent{detail}")
        self.node = node
        self.parent = parent


class UnknownOperator(GraphError):
    def __init__(self, name: str):
        super().__init__(f"unknown operator {name!r}")
        self.name = name


class InvalidGraph(GraphError):
    pass


class Style(str, Enum):
    ORIGINAL = "original"
    PARA_AX = "para-ax"
    PARA_VAN = "para-van"
    PARA_REV = "para-rev"


def _add(a: Fraction, b: Fraction) -> Fraction:
    return a + b


def _sub(a: Fraction, b: Fraction) -> Fraction:
    return a - b


def _mul(a: Fraction, b: Fraction) -> Fraction:
    return a * b


def _div(a: Fraction, b: Fraction) -> Fraction:
    if b == 0:
        raise ZeroDivisionError
    return a / b


def _square(a: Fraction) -> Fraction:
    return a * a


SEMANTICS: dict[str, tuple[int, Callable[..., Fraction]]] = {
    "add": (2, _add),
    "subtract": (2, _sub),
    "multiply": (2, _mul),
    "divide": (2, _div),
    "square": (1, _square),
}

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_GRAPH_SLOTS = {1: {"child", "parent"}, 2: {"child", "parent1", "parent2"}}
_STEP_SLOTS = {1: {"a", "result", "what", "What"}, 2: {"a", "b", "result", "what", "What"}}


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER.findall(template))


@dataclass(frozen=True)
class OperatorSpec:
    name: str
    semantics: str
    verbalization: str
    style_templates: Mapping[str, str] = field(default_factory=dict)
    step_templates: Mapping[str, str] = field(default_factory=dict)
    function: str = ""

    def __post_init__(self) -> None:
        if self.semantics not in SEMANTICS:
            raise UnknownOperator(self.semantics)
        slots = _GRAPH_SLOTS[self.arity]
        for label, template in [("verbalization", self.verbalization), *self.style_templates.items()]:
            if placeholders(template) != slots:
                raise InvalidGraph(
                    f"operator {self.name!r}: {label} template must use exactly {sorted(slots)}"
                )
        for label, template in self.step_templates.items():
            if not placeholders(template) <= _STEP_SLOTS[self.arity]:
                raise InvalidGraph(f"operator {self.name!r}: bad step template {label!r}")

    @property
    def arity(self) -> int:
        return SEMANTICS[self.semantics][0]

    def apply(self, *args: Fraction) -> Fraction:
        return SEMANTICS[self.semantics][1](*args)

    def graph_template(self, style: Style | str) -> str:
        style = Style(style)
        if style is Style.ORIGINAL:
            return self.verbalization
        try:
            return self.style_templates[style.value]
        except KeyError:
            raise UnknownOperator(f"{self.name} (no {style.value} template)") from None


@dataclass(frozen=True)
class RuleSet:
    operators: tuple[OperatorSpec, ...]

    def __post_init__(self) -> None:
        names = [op.name for op in self.operators]
        if len(names) != len(set(names)):
            raise InvalidGraph("operator names must be unique")
        if not any(op.arity == 2 for op in self.operators):
            raise InvalidGraph("a rule set needs at least one binary operator")

    def __getitem__(self, name: str) -> OperatorSpec:
        for op in self.operators:
            if op.name == name:
                return op
        raise UnknownOperator(name)

    def __contains__(self, name: object) -> bool:
        return any(op.name == name for op in self.operators)

    @property
    def binary(self) -> list[OperatorSpec]:
        return [op for op in self.operators if op.arity == 2]

    @property
    def unary(self) -> list[OperatorSpec]:
        return [op for op in self.operators if op.arity == 1]

    def by_semantics(self, semantics: str) -> OperatorSpec:
        for op in self.operators:
            if op.semantics == semantics:
                return op
        raise UnknownOperator(semantics)

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping]) -> RuleSet:
        ops = []
        for name, entry in data.items():
            ops.append(
                OperatorSpec(
                    name=name,
                    semantics=entry.get("semantics", name),
                    verbalization=entry["verbalization"],
                    style_templates=dict(entry.get("style_templates", {})),
                    step_templates=dict(entry.get("step_templates", {})),
                    function=entry.get("function", ""),
                )
            )
        return cls(tuple(ops))

    def to_dict(self) -> dict:
        return {
            op.name: {
                "semantics": op.semantics,
                "function": op.function,
                "verbalization": op.verbalization,
                "style_templates": dict(op.style_templates),
                "step_templates": dict(op.step_templates),
            }
            for op in self.operators
        }


def load_ruleset(path: str | FsPath | None = None) -> RuleSet:
    """Load a rule-set JSON file; ``None`` gives the built-in add/subtract set."""
    if path is None:
        return builtin_ruleset()
    with open(path, encoding="utf-8") as fh:
        return RuleSet.from_dict(json.load(fh))


def builtin_ruleset(name: str = "default") -> RuleSet:
    filename = {"default": "ruleset.json", "full": "ruleset_full.json"}[name]
    text = resources.files("dedcons.resources").joinpath(filename).read_text(encoding="utf-8")
    return RuleSet.from_dict(json.loads(text))


@dataclass(frozen=True)
class Node:
    name: str
    value: Fraction | None = None
    operator: str | None = None
    parents: tuple[str, ...] = ()

    @property
    def is_input(self) -> bool:
        return self.operator is None

    @classmethod
    def input(cls, name: str, value: Number) -> Node:
        return cls(name=name, value=to_fraction(value))

    @classmethod
    def derived(cls, name: str, operator: str, parents: Iterable[str]) -> Node:
        return cls(name=name, operator=operator, parents=tuple(parents))

    def to_dict(self) -> dict:
        if self.is_input:
            return {"name": self.name, "value": encode_value(self.value)}
        return {"name": self.name, "op": self.operator, "parents": list(self.parents)}

    @classmethod
    def from_dict(cls, data: Mapping) -> Node:
        if "op" in data:
            return cls.derived(data["name"], data["op"], data["parents"])
        return cls.input(data["name"], to_fraction(data["value"]))


@dataclass(frozen=True)
class ComputationGraph:
    nodes: tuple[Node, ...]
    seed: int = 0
    graph_id: str = ""

    def __post_init__(self) -> None:
        names = [n.name for n in self.nodes]
        if len(names) != len(set(names)):
            raise InvalidGraph("node names must be unique")

    @property
    def inputs(self) -> list[Node]:
        return [n for n in self.nodes if n.is_input]

    @property
    def derived(self) -> list[Node]:
        return [n for n in self.nodes if not n.is_input]

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def index(self) -> dict[str, Node]:
        return {n.name: n for n in self.nodes}

    def validate(self, ruleset: RuleSet | None = None) -> None:
        """Check topological order, parent references and operator arity."""
        ruleset = ruleset or default_ruleset()
        seen: set[str] = set()
        for node in self.nodes:
            if not node.is_input:
                op = ruleset[node.operator]
                if len(node.parents) != op.arity:
                    raise InvalidGraph(
                        f"node {node.name!r}: {op.name} takes {op.arity} parents, got {len(node.parents)}"
                    )
                for parent in node.parents:
                    if parent not in seen:
                        raise DanglingParent(node.name, parent)
            elif node.value is None:
                raise InvalidGraph(f"input {node.name!r} has no value")
            seen.add(node.name)

    def to_dict(self) -> dict:
        return {
            "graph_id": self.graph_id,
            "seed": self.seed,
            "nodes": [n.to_dict() for n in self.nodes],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> ComputationGraph:
        return cls(
            nodes=tuple(Node.from_dict(n) for n in data["nodes"]),
            seed=int(data.get("seed", 0)),
            graph_id=data.get("graph_id", ""),
        )


@dataclass(frozen=True)
class Path:
    target: str
    steps: tuple[str, ...]

    @property
    def hop_count(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        return {"target": self.target, "steps": list(self.steps), "hop_count": self.hop_count}

    @classmethod
    def from_dict(cls, data: Mapping) -> Path:
        return cls(target=data["target"], steps=tuple(data["steps"]))


_DEFAULT_RULESET: RuleSet | None = None


def default_ruleset() -> RuleSet:
    """The full built-in vocabulary; names coincide with semantics."""
    global _DEFAULT_RULESET
    if _DEFAULT_RULESET is None:
        _DEFAULT_RULESET = builtin_ruleset("full")
    return _DEFAULT_RULESET


def evaluate_graph(graph: ComputationGraph, ruleset: RuleSet | None = None) -> dict[str, Fraction]:
    """Exact values for every node, computed in the graph's topological order."""
    ruleset = ruleset or default_ruleset()
    values: dict[str, Fraction] = {}
    for node in graph.nodes:
        if node.is_input:
            values[node.name] = node.value
            continue
        op = ruleset[node.operator]
        if len(node.parents) != op.arity:
            raise InvalidGraph(f"node {node.name!r}: arity mismatch for {op.name}")
        try:
            args = [values[p] for p in node.parents]
        except KeyError as exc:
            raise DanglingParent(node.name, exc.args[0]) from None
        try:
            values[node.name] = op.apply(*args)
        except ZeroDivisionError:
            raise DivisionByZero(node.name) from None
    return values


def _fill(template: str, slots: Mapping[str, str]) -> str:
    return _PLACEHOLDER.sub(lambda m: slots[m.group(1)], template)


def verbalize_node(node: Node, ruleset: RuleSet, style: Style | str = Style.ORIGINAL) -> str:
    if node.is_input:
        return f"  - {node.name} (value = {render_value(node.value)})"
    op = ruleset[node.operator]
    if op.arity == 1:
        slots = {"child": node.name, "parent": node.parents[0]}
    else:
        slots = {"child": node.name, "parent1": node.parents[0], "parent2": node.parents[1]}
    return _fill(op.graph_template(style), slots)


def verbalize_graph(
    graph: ComputationGraph, style: Style | str = Style.ORIGINAL, ruleset: RuleSet | None = None
) -> list[str]:
    """One line per node, in graph order."""
    ruleset = ruleset or default_ruleset()
    return [verbalize_node(node, ruleset, style) for node in graph.nodes]


def graph_document(
    graph: ComputationGraph,
    target: str,
    style: Style | str = Style.ORIGINAL,
    ruleset: RuleSet | None = None,
) -> str:
    """The full graph listing followed by the question about ``target``."""
    ruleset = ruleset or default_ruleset()
    lines = ["=== Graph Structure ===", "Inputs:"]
    lines += [verbalize_node(n, ruleset, style) for n in graph.inputs]
    lines.append("  Derived Nodes:")
    lines += ["  - " + verbalize_node(n, ruleset, style) for n in graph.derived]
    lines += ["", f"  What is the value of {target}?"]
    return "\n".join(lines)


def render_cot_steps(
    graph: ComputationGraph,
    path: Path,
    style: Style | str = Style.ORIGINAL,
    ruleset: RuleSet | None = None,
    values: Mapping[str, Fraction] | None = None,
) -> list[str]:
    """Reference chain-of-thought, one entry per derived step of ``path``.

    Each step opens with "Given value" lines for the inputs it is the first to
    use (in graph order), then the step's verbalization and its computed value.
    A path without derived steps yields a single entry of "Given value" lines.
    """
    ruleset = ruleset or default_ruleset()
    values = values if values is not None else evaluate_graph(graph, ruleset)
    index = graph.index()
    order = {n.name: i for i, n in enumerate(graph.nodes)}
    introduced: set[str] = set()

    def given_lines(names: Iterable[str]) -> str:
        fresh = sorted(
            (n for n in set(names) if index[n].is_input and n not in introduced), key=order.__getitem__
        )
        introduced.update(fresh)
        return "\n".join(f"- Given value of {n} = {render_value(values[n])} ." for n in fresh)

    if not path.steps:
        return [given_lines([path.target])]
    steps = []
    for name in path.steps:
        node = index[name]
        head = given_lines(node.parents)
        body = verbalize_node(node, ruleset, style)
        steps.append(f"{head}{body}\nThe Computed value of {name} = {render_value(values[name])}")
    return steps

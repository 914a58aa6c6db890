"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the package's own evaluation, path and
fitting code so that tests compare two separately written routes.
"""

from __future__ import annotations

import json
import operator
from fractions import Fraction
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

_ORACLE_OPS = {
    "add": operator.add,
    "subtract": operator.sub,
    "multiply": operator.mul,
    "divide": operator.truediv,
    "square": lambda a: a * a,
}


def recursive_values(graph: dict) -> dict[str, Fraction]:
    """Naive memoized recursion over a serialized graph document."""
    by_name = {n["name"]: n for n in graph["nodes"]}
    memo: dict[str, Fraction] = {}

    def value(name: str) -> Fraction:
        if name not in memo:
            node = by_name[name]
            if "op" not in node:
                memo[name] = Fraction(node["value"])
            else:
                memo[name] = _ORACLE_OPS[node["op"]](*(value(p) for p in node["parents"]))
        return memo[name]

    return {name: value(name) for name in by_name}


def derived_ancestors(graph: dict, target: str) -> set[str]:
    """Target plus every derived node it depends on, by plain depth-first search."""
    by_name = {n["name"]: n for n in graph["nodes"]}
    seen: set[str] = set()
    stack = [target]
    while stack:
        name = stack.pop()
        node = by_name[name]
        if "op" not in node or name in seen:
            continue
        seen.add(name)
        stack.extend(node["parents"])
    return seen


def polyfit_slope(xs, ys) -> float:
    import numpy as np

    return float(np.polyfit(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float), 1)[0])


@pytest.fixture(scope="session")
def appendix_graph_doc() -> dict:
    return json.loads((FIXTURES / "appendix_graph.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def appendix_graph(appendix_graph_doc):
    from dedcons.graph import ComputationGraph

    return ComputationGraph.from_dict(appendix_graph_doc)


@pytest.fixture(scope="session")
def appendix_texts() -> dict[str, str]:
    return {
        name: (FIXTURES / f"appendix_{name}.txt").read_text(encoding="utf-8")
        for name in ("document", "prefill", "response")
    }


@pytest.fixture(scope="session")
def reference_tables() -> dict:
    return json.loads((FIXTURES / "reference_tables.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def corpus():
    from dedcons.mutate import load_corpus

    return load_corpus()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

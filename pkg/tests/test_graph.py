from __future__ import annotations

import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import recursive_values
from dedcons.extract import extract_variables_pattern
from dedcons.graph import (
    ComputationGraph,
    DanglingParent,
    DivisionByZero,
    InvalidGraph,
    Node,
    Path,
    RuleSet,
    Style,
    UnknownOperator,
    builtin_ruleset,
    evaluate_graph,
    graph_document,
    load_ruleset,
    render_cot_steps,
    verbalize_graph,
    verbalize_node,
)
from dedcons.numeric import decode_value, encode_value, render_value, to_fraction
from dedcons.syndeduct import extract_paths


APPENDIX_VALUES = {"Certain": 10, "Irtysh": 15, "Horstman": -2, "Pellicano": -7, "SEPA": 25, "Arvelo": -32}


def random_graph(rng: random.Random, n_nodes: int, ops=("add", "subtract", "multiply", "divide")) -> dict:
    """Random serialized graph drawn without the package's sampler."""
    n_inputs = rng.randint(1, min(3, n_nodes))
    nodes = [{"name": f"x{i}", "value": rng.randint(-9, 9)} for i in range(n_inputs)]
    for i in range(n_inputs, n_nodes):
        earlier = [n["name"] for n in nodes]
        op = rng.choice(ops)
        nodes.append({"name": f"x{i}", "op": op, "parents": [rng.choice(earlier), rng.choice(earlier)]})
    return {"graph_id": "r", "seed": 0, "nodes": nodes}


def test_appendix_graph_values(appendix_graph):
    values = evaluate_graph(appendix_graph)
    for name, expected in APPENDIX_VALUES.items():
        assert values[name] == expected


def test_input_only_graph_returns_inputs():
    graph = ComputationGraph((Node.input("a", 3), Node.input("b", Fraction(1, 2))))
    assert evaluate_graph(graph) == {"a": 3, "b": Fraction(1, 2)}


def test_random_graphs_match_recursive_oracle():
    rng = random.Random(7)
    checked = 0
    for _ in range(200):
        doc = random_graph(rng, rng.randint(1, 12))
        graph = ComputationGraph.from_dict(doc)
        try:
            oracle = recursive_values(doc)
        except ZeroDivisionError:
            with pytest.raises(DivisionByZero):
                evaluate_graph(graph)
            continue
        assert evaluate_graph(graph) == oracle
        checked += 1
    assert checked > 150


def test_division_by_zero_names_node():
    graph = ComputationGraph(
        (Node.input("a", 1), Node.input("z", 0), Node.derived("q", "divide", ("a", "z")))
    )
    with pytest.raises(DivisionByZero) as err:
        evaluate_graph(graph)
    assert err.value.node == "q"


def test_graph_invariants():
    with pytest.raises(InvalidGraph):
        ComputationGraph((Node.input("a", 1), Node.input("a", 2)))
    late = ComputationGraph((Node.input("a", 1), Node.derived("b", "add", ("a", "c")), Node.input("c", 2)))
    with pytest.raises(DanglingParent):
        late.validate()
    with pytest.raises(UnknownOperator):
        ComputationGraph((Node.input("a", 1), Node.derived("b", "pow", ("a", "a")))).validate()
    with pytest.raises(InvalidGraph):
        ComputationGraph((Node.input("a", 1), Node.derived("b", "add", ("a",)))).validate()


def test_graph_round_trip(appendix_graph, appendix_graph_doc):
    assert ComputationGraph.from_dict(appendix_graph.to_dict()) == appendix_graph
    assert appendix_graph.to_dict() == appendix_graph_doc


def test_ruleset_rejects_unknown_semantics(tmp_path):
    bad = {"pow": {"semantics": "power", "verbalization": "{child} is {parent1} to the {parent2}."}}
    with pytest.raises(UnknownOperator):
        RuleSet.from_dict(bad)
    path = tmp_path / "rules.json"
    path.write_text(json.dumps(builtin_ruleset().to_dict()))
    assert load_ruleset(path).to_dict() == builtin_ruleset().to_dict()


def test_ruleset_function_string_is_never_executed():
    data = builtin_ruleset().to_dict()
    data["add"]["function"] = "__import__('os').system('false')"
    rules = RuleSet.from_dict(data)
    assert rules["add"].apply(Fraction(2), Fraction(3)) == 5


def test_verbalize_add_node_original():
    node = Node.derived("Certain", "add", ("Nalca", "Masako"))
    assert verbalize_node(node, builtin_ruleset()) == "Certain is the sum of Nalca and Masako."


@pytest.mark.parametrize("style", list(Style))
def test_verbalize_input_node_any_style(style):
    assert verbalize_node(Node.input("Rondeau", 10), builtin_ruleset(), style) == "  - Rondeau (value = 10)"


def test_verbalize_subtract_para_rev_puts_claim_first():
    node = Node.derived("Horstman", "subtract", ("Masako", "Certain"))
    text = verbalize_node(node, builtin_ruleset(), Style.PARA_REV)
    assert text.index("Horstman") < text.index("which is the difference between Masako and Certain")


def test_verbalize_graph_deterministic(appendix_graph):
    for style in Style:
        assert verbalize_graph(appendix_graph, style) == verbalize_graph(appendix_graph, style)
    assert len(verbalize_graph(appendix_graph)) == len(appendix_graph.nodes)


def test_graph_document_matches_appendix(appendix_graph, appendix_texts):
    doc = graph_document(appendix_graph, "Arvelo")
    assert doc == appendix_texts["document"]
    assert doc.startswith("=== Graph Structure ===")
    assert doc.endswith("What is the value of Arvelo?")


def test_cot_first_step_matches_appendix_prefill(appendix_graph, appendix_texts):
    path = next(p for p in extract_paths(appendix_graph, 24) if p.target == "Arvelo")
    steps = render_cot_steps(appendix_graph, path)
    expected = (
        "- Given value of Masako = 8 .\n- Given value of Nalca = 2 .Certain is the sum of Nalca and Masako."
        "\nThe Computed value of Certain = 10"
    )
    assert steps[0] == expected
    assert appendix_texts["prefill"] == "Answer: " + expected + " "


def test_cot_zero_steps_only_given_lines(appendix_graph):
    steps = render_cot_steps(appendix_graph, Path("Masako", ()))
    assert steps == ["- Given value of Masako = 8 ."]


def test_cot_round_trip_through_parser():
    rng = random.Random(3)
    for _ in range(50):
        doc = random_graph(rng, rng.randint(2, 12), ops=("add", "subtract", "multiply"))
        graph = ComputationGraph.from_dict(doc)
        values = evaluate_graph(graph)
        for path in extract_paths(graph, 12):
            text = "\n".join(render_cot_steps(graph, path))
            got = extract_variables_pattern(text, path.steps)
            assert got.values == {s: values[s] for s in path.steps}


@given(st.fractions(max_denominator=10**6).filter(lambda f: abs(f) < 10**9))
def test_encode_decode_exact(value):
    assert decode_value(json.loads(json.dumps(encode_value(value)))) == value


@settings(max_examples=200)
@given(st.integers(min_value=-10**12, max_value=10**12))
def test_render_integers_verbatim(n):
    assert render_value(n) == str(n)


def test_render_rationals_six_significant_digits():
    assert render_value(Fraction(12, 7)) == "1.71429"
    assert render_value(Fraction(1, 2)) == "0.5"
    assert render_value(Fraction(-1, 3)) == "-0.333333"
    assert to_fraction(0.35) == Fraction(7, 20)
    with pytest.raises(TypeError):
        to_fraction(True)

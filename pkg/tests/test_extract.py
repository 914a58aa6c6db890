from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dedcons.extract import (
    ExtractedAssignment,
    ExtractionCache,
    extract_final_answer,
    extract_variables_lm,
    extract_variables_pattern,
    normalize_numeric,
    parse_extractor_output,
    values_match,
)
from dedcons.runner import EndpointConfig, RawResponse

HILLARY_VARS = {
    "price_per_craft": "The price of each craft",
    "number_of_crafts": "The number of crafts sold",
    "extra_dollars": "The extra amount given by the customer",
    "deposit_amount": "The amount deposited into the bank account",
    "total_earnings": "The total amount earned from selling crafts",
    "total_amount": "The total amount after receiving the extra dollars",
    "amount_left": "The amount left after depositing",
}
HILLARY_OUTPUT = """<JSON> {
    "price_per_craft": "15",
    "number_of_crafts": "6",
    "extra_dollars": "5",
    "deposit_amount": "12",
    "total_earnings": "90",
    "total_amount": "95",
    "amount_left": "83"
} </JSON>"""
HATS_OUTPUT = """<JSON> {
    "pink": "5",
    "green": "16",
    "yellow": "15",
    "carl_pink": "10",
    "john_pink": "7",
    "total_initial": "36",
    "total_after_carl": "26",
    "total_after_john_pink": "19",
    "john_green": "14",
    "total_final": "5"
} </JSON>"""


@pytest.mark.parametrize(
    "token,expected",
    [
        ("3/2", Fraction(3, 2)),
        ("25.5", Fraction(51, 2)),
        ("12+8", 20),
        ("1,234", 1234),
        ("$1,234.50", Fraction(246900, 200)),
        ("-7", -7),
        ("−7", -7),
        ("7 × 2", 14),
        ("14 ÷ 4", Fraction(7, 2)),
        ("19 - 14", 5),
        ("\\(19 - 14\\)", 5),
        ("83.", 83),
        (42, 42),
        (0.35, Fraction(7, 20)),
    ],
)
def test_normalize_numeric_accepts(token, expected):
    assert normalize_numeric(token) == expected


@pytest.mark.parametrize("token", [None, "", "None", "abc", "1/0", "1 + 2 + 3", "twelve", True, [1]])
def test_normalize_numeric_rejects(token):
    assert normalize_numeric(token) is None


@given(st.integers(min_value=-10**9, max_value=10**9), st.integers(min_value=1, max_value=10**6))
def test_normalize_fraction_strings(p, q):
    assert normalize_numeric(f"{p}/{q}") == Fraction(p, q)


def test_final_answer_takes_last_marker(appendix_texts):
    assert extract_final_answer(appendix_texts["response"]) == -3
    assert extract_final_answer("#### 56") == 56
    assert extract_final_answer("#### 1\nmore\n#### 2") == 2
    assert extract_final_answer("no marker here") is None
    assert extract_final_answer("#### maybe") is None
    assert extract_final_answer("#### $1,200.") == 1200


def test_pattern_extraction_on_appendix_response(appendix_texts):
    text = appendix_texts["prefill"] + appendix_texts["response"]
    got = extract_variables_pattern(text, ["Certain", "Irtysh", "Horstman", "Pellicano", "SEPA", "Arvelo", "Nourse"])
    assert got.values == {
        "Certain": 10,
        "Irtysh": 15,
        "Horstman": -2,
        "Pellicano": -7,
        "SEPA": 25,
        "Arvelo": -32,
        "Nourse": 15,
    }
    assert got.final_answer == -3
    assert "Nourse" in got.conflicts
    assert "Certain" not in got.conflicts


def test_pattern_first_occurrence_final_term():
    text = "The Computed value of Nourse = 15 + 10 = 25\nThe Computed value of Nourse = 100\nThe value of Nourse = 7"
    got = extract_variables_pattern(text, ["Nourse"])
    assert got.values["Nourse"] == 25
    assert got.conflicts == ["Nourse"]


def test_pattern_all_forms_and_absence():
    text = "- Given value of a = 3 .\nThe value of b = 4\nThe Computed value of c = 3 + 4 = 7"
    got = extract_variables_pattern(text, ["a", "b", "c", "d"])
    assert got.values == {"a": 3, "b": 4, "c": 7, "d": None}
    assert got.stated() == {"a", "b", "c"}


def test_pattern_empty_text_all_none():
    got = extract_variables_pattern("", ["a", "b"])
    assert got.values == {"a": None, "b": None}
    assert got.final_answer is None


def test_letter_x_is_not_multiplication_across_lines():
    text = "The Computed value of a = -12\nx4 is the sum of a and b."
    assert extract_variables_pattern(text, ["a"]).values["a"] == -12
    assert extract_variables_pattern("The value of a = 3 x 4", ["a"]).values["a"] == 12


def test_values_match_boundaries():
    assert values_match(104, 100)
    assert not values_match(106, 100)
    assert not values_match(-3, -32)
    assert not values_match(None, 5)
    assert values_match(0, 0)
    assert not values_match(Fraction(1, 10**6), 0)
    assert values_match(Fraction(12, 7), Fraction(171429, 100000))


@given(st.fractions(max_denominator=1000).filter(lambda f: abs(f) < 10**6))
def test_values_match_reflexive(x):
    assert values_match(x, x)


def test_extractor_output_examples():
    got = parse_extractor_output(HILLARY_OUTPUT, list(HILLARY_VARS))
    assert got.values["price_per_craft"] == 15
    assert got.values["total_earnings"] == 90
    assert got.values["amount_left"] == 83
    hats = parse_extractor_output(HATS_OUTPUT, ["john_green", "total_final", "missing"])
    assert hats.values == {"john_green": 14, "total_final": 5, "missing": None}


def test_extractor_output_without_delimiters_is_malformed():
    got = parse_extractor_output("The price was 15 and the total 90.", ["price"])
    assert got.malformed
    assert got.values == {"price": None}
    assert parse_extractor_output('<JSON> {"a": "None", "b": "3/2"} </JSON>', ["a", "b"]).values == {
        "a": None,
        "b": Fraction(3, 2),
    }


def test_lm_extraction_sends_prompt_and_caches(tmp_path):
    calls = []

    def send(endpoint, bundle):
        calls.append(bundle)
        return RawResponse(text=HILLARY_OUTPUT)

    cache = ExtractionCache(tmp_path / "cache.jsonl")
    solution = "Hillary earns 15 x 6 = 90 dollars.\n#### 83"
    kwargs = dict(question="Hillary sells crafts.", cache=cache, send=send)
    first = extract_variables_lm(solution, list(HILLARY_VARS), HILLARY_VARS, EndpointConfig(), **kwargs)
    second = extract_variables_lm(solution, list(HILLARY_VARS), HILLARY_VARS, EndpointConfig(), **kwargs)
    assert len(calls) == 1
    assert first.values == second.values
    assert first.final_answer == 83
    assert "Hillary sells crafts." in calls[0].user_text
    assert "The price of each craft" in calls[0].user_text
    assert solution in calls[0].user_text
    reloaded = ExtractionCache(tmp_path / "cache.jsonl")
    assert reloaded.get(solution, HILLARY_VARS) is not None


def test_assignment_round_trip():
    got = ExtractedAssignment({"a": Fraction(3, 2), "b": None}, final_answer=Fraction(7), backend="pattern")
    assert ExtractedAssignment.from_dict(got.to_dict()) == got

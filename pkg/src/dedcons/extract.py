"""Answer and variable extraction from free-form responses, numeric
normalization, and the tolerance comparison used for scoring."""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .numeric import Number, encode_value, decode_value, to_fraction

_NUM = r"[-−]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|[-−]?\.\d+"
_OPERAND = rf"[$€£]?\s*(?:{_NUM})"
_OPS = "+-−*/x×÷"
_BINARY = re.compile(rf"^\s*({_OPERAND})\s*([{re.escape(_OPS)}])\s*({_OPERAND})\s*$")
_SINGLE = re.compile(rf"^\s*({_OPERAND})\s*$")
_FRACTION = re.compile(r"^\s*([-−]?\d+)\s*/\s*(\d+)\s*$")
# inside running text the letter x only counts as "times" between blanks on one line
_INFIX = r"(?:\s*[-+−*/×÷]\s*|[ \t]+x[ \t]+)"
_LEADING = re.compile(rf"^\s*{_OPERAND}(?:{_INFIX}{_OPERAND})?")
_TRAILING_JUNK = ".,;:!?)]}\"'"
_LATEX_WRAPPERS = ("\\(", "\\)", "\\[", "\\]", "$$")


def _operand(text: str) -> Fraction:
    text = text.strip().lstrip("$€£").strip().replace("−", "-").replace(",", "")
    return Fraction(text)


def normalize_numeric(token: object) -> Fraction | None:
    """Parse a number, a/b fraction, or one binary expression into an exact value.

    Accepts leading currency symbols and thousands separators. Anything else
    (including division by zero) gives None.
    """
    if token is None or isinstance(token, bool):
        return None
    if isinstance(token, (int, float, Fraction)):
        try:
            return to_fraction(token)
        except (ValueError, OverflowError):
            return None
    if not isinstance(token, str):
        return None
    text = token.strip()
    for wrapper in _LATEX_WRAPPERS:
        text = text.replace(wrapper, "")
    text = text.strip().rstrip(_TRAILING_JUNK).strip()
    if not text or text.lower() == "none":
        return None
    try:
        if _SINGLE.match(text):
            return _operand(text)
        m = _FRACTION.match(text)
        if m:
            den = int(m.group(2))
            return None if den == 0 else Fraction(int(m.group(1).replace("−", "-")), den)
        m = _BINARY.match(text)
        if m:
            a, op, b = _operand(m.group(1)), m.group(2), _operand(m.group(3))
            if op == "+":
                return a + b
            if op in "-−":
                return a - b
            if op in "*x×":
                return a * b
            return None if b == 0 else a / b
    except (ValueError, ZeroDivisionError):
        return None
    return None


def _leading_value(text: str) -> Fraction | None:
    text = text.strip()
    for wrapper in _LATEX_WRAPPERS:
        text = text.replace(wrapper, "")
    whole = normalize_numeric(text)
    if whole is not None:
        return whole
    m = _LEADING.match(text)
    return normalize_numeric(m.group(0)) if m else None


def extract_final_answer(text: str | None) -> Fraction | None:
    """Value after the last ``####`` marker, or None."""
    if not text or "####" not in text:
        return None
    tail = text.rsplit("####", 1)[1]
    line = tail.strip().split("\n", 1)[0]
    return _leading_value(line)


@dataclass
class ExtractedAssignment:
    values: dict[str, Fraction | None]
    final_answer: Fraction | None = None
    backend: str = "pattern"
    conflicts: list[str] = field(default_factory=list)
    malformed: bool = False
    error: str | None = None

    def stated(self) -> set[str]:
        return {k for k, v in self.values.items() if v is not None}

    def to_dict(self) -> dict:
        return {
            "values": {k: None if v is None else encode_value(v) for k, v in self.values.items()},
            "final_answer": None if self.final_answer is None else encode_value(self.final_answer),
            "backend": self.backend,
            "conflicts": list(self.conflicts),
            "malformed": self.malformed,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> ExtractedAssignment:
        return cls(
            values={k: None if v is None else decode_value(v) for k, v in data["values"].items()},
            final_answer=None if data.get("final_answer") is None else decode_value(data["final_answer"]),
            backend=data.get("backend", "pattern"),
            conflicts=list(data.get("conflicts", [])),
            malformed=bool(data.get("malformed", False)),
            error=data.get("error"),
        )


def _statement_pattern(name: str) -> re.Pattern:
    return re.compile(rf"value of\s+{re.escape(name)}\s*=", re.IGNORECASE)


# operands and "=" may be separated by line breaks (wrapped output)
_CHAIN_TERM = re.compile(rf"[ \t]*(?:\\\(|\$)?[ \t]*({_OPERAND}(?:{_INFIX}{_OPERAND})?)")
_CHAIN_EQ = re.compile(r"\s*=")


def _chain_value(text: str, pos: int) -> Fraction | None:
    """Value of an "a + b = c = ..." chain starting at ``pos``: its last term."""
    value = None
    while True:
        m = _CHAIN_TERM.match(text, pos)
        if not m:
            return value
        value = normalize_numeric(m.group(1))
        pos = m.end()
        eq = _CHAIN_EQ.match(text, pos)
        if not eq:
            return value
        pos = eq.end()


def extract_variables_pattern(text: str | None, variables: Iterable[str]) -> ExtractedAssignment:
    """Scan for "value of <name> = <expr>" statements; the first occurrence counts.

    Variables restated later with a different value are listed in ``conflicts``.
    """
    text = text or ""
    values: dict[str, Fraction | None] = {}
    conflicts = []
    for name in variables:
        found = [_chain_value(text, m.end()) for m in _statement_pattern(name).finditer(text)]
        values[name] = found[0] if found else None
        if found and any(v != found[0] for v in found[1:]):
            conflicts.append(name)
    return ExtractedAssignment(values=values, final_answer=extract_final_answer(text), conflicts=conflicts)


def values_match(predicted: Number | None, reference: Number, rel_tol: float = 0.05) -> bool:
    """|predicted - reference| <= rel_tol * |reference|; 1e-9 absolute when the reference is 0."""
    if predicted is None:
        return False
    p, r = to_fraction(predicted), to_fraction(reference)
    diff = abs(p - r)
    if r == 0:
        return diff <= Fraction(1, 10**9)
    return diff <= to_fraction(rel_tol) * abs(r)


# -- LM backend ---------------------------------------------------------------


class MalformedExtraction(ValueError):
    pass


_JSON_BLOCK = re.compile(r"<JSON>(.*?)</JSON>", re.DOTALL | re.IGNORECASE)


def parse_tagged_json(text: str) -> dict:
    """The object between <JSON> and </JSON>; raises MalformedExtraction otherwise."""
    m = _JSON_BLOCK.search(text or "")
    if not m:
        raise MalformedExtraction("no <JSON> block")
    try:
        obj = json.loads(m.group(1).strip())
    except json.JSONDecodeError as exc:
        raise MalformedExtraction(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedExtraction("JSON block is not an object")
    return obj


def parse_extractor_output(text: str, variables: Sequence[str]) -> ExtractedAssignment:
    try:
        obj = parse_tagged_json(text)
    except MalformedExtraction as exc:
        return ExtractedAssignment(
            values={v: None for v in variables}, backend="lm", malformed=True, error=str(exc)
        )
    values = {v: normalize_numeric(obj.get(v)) for v in variables}
    return ExtractedAssignment(values=values, backend="lm")


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class ExtractionCache:
    """LM extraction results keyed by (response hash, variable-set hash); optionally file backed."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._data: dict[tuple[str, str], dict] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._data[(rec["text_hash"], rec["vars_hash"])] = rec["result"]

    @staticmethod
    def key(text: str, variables: Iterable[str]) -> tuple[str, str]:
        return _sha(text), _sha(json.dumps(sorted(variables)))

    def get(self, text: str, variables: Iterable[str]) -> ExtractedAssignment | None:
        rec = self._data.get(self.key(text, variables))
        return None if rec is None else ExtractedAssignment.from_dict(rec)

    def put(self, text: str, variables: Iterable[str], result: ExtractedAssignment) -> None:
        key = self.key(text, variables)
        with self._lock:
            self._data[key] = result.to_dict()
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    rec = {"text_hash": key[0], "vars_hash": key[1], "result": result.to_dict()}
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self._data)


def extract_variables_lm(
    text: str,
    variables: Sequence[str],
    explanations: Mapping[str, str],
    endpoint,
    *,
    question: str = "",
    template: str = "",
    cache: ExtractionCache | None = None,
    send: Callable | None = None,
) -> ExtractedAssignment:
    """Ask an extractor model for each variable's stated value.

    ``send`` defaults to the runner's ``complete``; endpoint failures propagate.
    """
    from .runner import PromptBundle, complete, load_prompt, fill

    if cache is not None:
        hit = cache.get(text, variables)
        if hit is not None:
            return hit
    described = {v: explanations.get(v, v) for v in variables}
    bundle = PromptBundle(
        system_text=load_prompt("extractor_system"),
        user_text=fill(
            load_prompt("extractor_user"),
            question=question,
            solution=text,
            variables=json.dumps(described, indent=4),
            template=template,
        ),
        instance_ref="extractor",
    )
    response = (send or complete)(endpoint, bundle)
    result = parse_extractor_output(response.text, variables)
    result.final_answer = extract_final_answer(text)
    if cache is not None:
        cache.put(text, variables, result)
    return result

"""Deductive-consistency metrics over scored variable records."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Collection, Iterable, Mapping, Sequence

from .numeric import decode_value, encode_value

log = logging.getLogger(__name__)


class NoSamples(ValueError):
    def __init__(self, k: int, hop: int):
        super().__init__(f"no records at prefix {k}, hop {hop}")
        self.k = k
        self.hop = hop


class EmptyProof(ValueError):
    pass


class DegenerateSeries(ValueError):
    pass


class OutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    """One scored variable: was its value at this hop, given this prefix, right?"""

    problem_id: str
    prefix_k: int
    variable: str
    hop: int
    predicted: Fraction | None
    reference: Fraction
    correct: bool
    is_target: bool = False
    mutation_id: int = 0
    instance_id: str = ""

    def __post_init__(self) -> None:
        if self.hop < 1:
            raise ValueError("hop must be >= 1")
        if self.prefix_k < 0:
            raise ValueError("prefix_k must be >= 0")
        if self.correct and self.predicted is None:
            raise ValueError("a correct record needs a predicted value")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["predicted"] = None if self.predicted is None else encode_value(self.predicted)
        d["reference"] = encode_value(self.reference)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> EvalRecord:
        return cls(
            problem_id=str(data["problem_id"]),
            prefix_k=int(data["prefix_k"]),
            variable=data["variable"],
            hop=int(data["hop"]),
            predicted=None if data.get("predicted") is None else decode_value(data["predicted"]),
            reference=decode_value(data["reference"]),
            correct=bool(data["correct"]),
            is_target=bool(data.get("is_target", False)),
            mutation_id=int(data.get("mutation_id", 0)),
            instance_id=data.get("instance_id", ""),
        )


@dataclass(frozen=True)
class DCPoint:
    x: int
    mean: float
    std_err: float
    n: int
    groups: int


@dataclass
class DCSeries:
    points: list[DCPoint]
    k_marginalized: bool = True
    omitted: list[int] = field(default_factory=list)

    @property
    def hops(self) -> list[int]:
        return [p.x for p in self.points]

    @property
    def means(self) -> list[float]:
        return [p.mean for p in self.points]

    def to_dict(self) -> dict:
        return {
            "points": [asdict(p) for p in self.points],
            "k_marginalized": self.k_marginalized,
            "omitted": list(self.omitted),
        }


def per_proof_consistency(records: Sequence[EvalRecord] | Sequence[bool]) -> float:
    """Share of a proof's verifiable steps that are correct."""
    flags = [r if isinstance(r, bool) else r.correct for r in records]
    if not flags:
        raise EmptyProof("a proof needs at least one verifiable step")
    return float(Fraction(sum(flags), len(flags)))


def deductive_consistency(records: Iterable[EvalRecord], k: int, hop: int) -> tuple[float, int]:
    """Fraction correct among records at (prefix k, hop), and how many there are."""
    n = correct = 0
    for r in records:
        if r.prefix_k == k and r.hop == hop:
            n += 1
            correct += r.correct
    if n == 0:
        raise NoSamples(k, hop)
    return correct / n, n


def dc_matrix(records: Iterable[EvalRecord]) -> dict[tuple[int, int], tuple[float, int]]:
    """(prefix, hop) -> (DedCons, count) for every populated cell."""
    counts: dict[tuple[int, int], list[int]] = defaultdict(lambda: [0, 0])
    for r in records:
        cell = counts[(r.prefix_k, r.hop)]
        cell[0] += r.correct
        cell[1] += 1
    return {key: (c / n, n) for key, (c, n) in sorted(counts.items())}


def _mean_and_se(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def hop_filter(
    records: Iterable[EvalRecord], min_ratio: float = 0.2, reference_prefix: int | None = 1
) -> tuple[set[int], list[int]]:
    """Hops kept and dropped by the sample-share rule.

    A hop is kept when its record count at ``reference_prefix`` exceeds
    ``min_ratio`` times the hop-1 count at that prefix. Without records at the
    reference prefix the smallest populated prefix is used instead.
    """
    counts: dict[int, dict[int, int]] = defaultdict(lambda: defaultdict(int))
    hops = set()
    for r in records:
        counts[r.prefix_k][r.hop] += 1
        hops.add(r.hop)
    if not counts:
        return set(), []
    k_ref = reference_prefix if reference_prefix in counts else min(counts)
    base = counts[k_ref].get(1, 0) or counts[k_ref][min(counts[k_ref])]
    kept = {h for h in hops if counts[k_ref].get(h, 0) / base > min_ratio}
    return kept, sorted(hops - kept)


def dc_by_hop(
    records: Sequence[EvalRecord], min_ratio: float = 0.2, reference_prefix: int | None = 1
) -> DCSeries:
    """Mean DedCons per hop, each populated prefix weighted equally; SE across the per-prefix values."""
    if not records:
        raise NoSamples(-1, -1)
    kept, omitted = hop_filter(records, min_ratio, reference_prefix)
    if omitted:
        log.info("hops omitted by the %.0f%% sample-share rule: %s", 100 * min_ratio, omitted)
    matrix = dc_matrix(records)
    by_hop: dict[int, list[tuple[float, int]]] = defaultdict(list)
    for (k, hop), (dc, n) in matrix.items():
        if hop in kept:
            by_hop[hop].append((dc, n))
    points = []
    for hop in sorted(by_hop):
        cells = by_hop[hop]
        mean, se = _mean_and_se([dc for dc, _ in cells])
        points.append(DCPoint(hop, mean, se, sum(n for _, n in cells), len(cells)))
    return DCSeries(points, k_marginalized=True, omitted=omitted)


def dc_by_prefix(records: Sequence[EvalRecord]) -> DCSeries:
    """Mean DedCons per prefix length, each populated hop weighted equally."""
    matrix = dc_matrix(records)
    by_k: dict[int, list[tuple[float, int]]] = defaultdict(list)
    for (k, hop), (dc, n) in matrix.items():
        by_k[k].append((dc, n))
    points = []
    for k in sorted(by_k):
        mean, se = _mean_and_se([dc for dc, _ in by_k[k]])
        points.append(DCPoint(k, mean, se, sum(n for _, n in by_k[k]), len(by_k[k])))
    return DCSeries(points, k_marginalized=False)


def coverage(items: Iterable[tuple[Collection[str], Collection[str]]], denominator: str = "reference") -> float:
    """Share of reference variables the response states.

    Each item is (reference variables, variables stated with a value). With
    ``denominator="stated"`` the share is taken over the stated variables instead.
    """
    hit = total = 0
    for reference, stated in items:
        ref = set(reference)
        got = set(stated)
        hit += len(ref & got)
        total += len(ref) if denominator == "reference" else len(got)
    if denominator not in ("reference", "stated"):
        raise ValueError(f"unknown denominator {denominator!r}")
    if total == 0:
        if denominator == "reference":
            raise ValueError("no reference variables")
        return 0.0
    return hit / total


def ols_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    return sxy / sxx


def base_and_decay(series: DCSeries | Sequence[tuple[int, float]]) -> tuple[float, float]:
    """Base is the value at the smallest hop; decay is minus the least-squares slope against hop / max hop."""
    pairs = [(p.x, p.mean) for p in series.points] if isinstance(series, DCSeries) else list(series)
    pairs.sort()
    if len(pairs) < 2:
        raise DegenerateSeries("need at least two hops")
    l_max = pairs[-1][0]
    xs = [h / l_max for h, _ in pairs]
    ys = [v for _, v in pairs]
    decay = -ols_slope(xs, ys)
    if decay == 0:
        decay = 0.0  # normalize -0.0
    return pairs[0][1], decay


GROUP_LABELS = {1: "acc = 1", 2: "0.7 <= acc < 1", 3: "0.4 <= acc < 0.7", 4: "0 < acc < 0.4", 5: "acc = 0"}


def group_by_accuracy(accuracy: float) -> int:
    if not 0.0 <= accuracy <= 1.0 or math.isnan(accuracy):
        raise OutOfRange(f"accuracy {accuracy} outside [0, 1]")
    if accuracy == 1.0:
        return 1
    if accuracy >= 0.7:
        return 2
    if accuracy >= 0.4:
        return 3
    if accuracy > 0.0:
        return 4
    return 5


def group_counts(accuracies: Mapping[str, float]) -> dict[int, int]:
    counts = {g: 0 for g in GROUP_LABELS}
    for acc in accuracies.values():
        counts[group_by_accuracy(acc)] += 1
    return counts


# -- error judging ---------------------------------------------------------------

JUDGE_CATEGORIES = ("logical", "understanding", "calculation", "propagated")


@dataclass
class Judgement:
    flags: dict[str, bool] | None
    status: str = "judged"
    error: str | None = None


def judge_errors(response: str, question: str, endpoint, send=None) -> Judgement:
    """Ask a judge model which error categories a response exhibits."""
    from .extract import MalformedExtraction, parse_tagged_json
    from .runner import EndpointError, PromptBundle, complete, fill, load_prompt

    if not response or not response.strip():
        return Judgement(None, "unjudged", "empty response")
    bundle = PromptBundle(
        system_text=load_prompt("judge_system"),
        user_text=fill(load_prompt("judge_user"), question=question, response=response),
        instance_ref="judge",
    )
    try:
        raw = (send or complete)(endpoint, bundle)
        obj = parse_tagged_json(raw.text)
    except (EndpointError, MalformedExtraction) as exc:
        return Judgement(None, "unjudged", f"{type(exc).__name__}: {exc}")
    flags = {c: _truthy(obj.get(c, False)) for c in JUDGE_CATEGORIES}
    return Judgement(flags)


def _truthy(value: object) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("true", "yes", "1")
    return bool(value)


def aggregate_judgements(judged: Iterable[tuple[int, Judgement]]) -> dict[int, dict[str, float]]:
    """Per accuracy group, the share of judged error responses showing each category."""
    totals: dict[int, int] = defaultdict(int)
    hits: dict[int, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for group, j in judged:
        if j.flags is None:
            continue
        totals[group] += 1
        for c, flag in j.flags.items():
            hits[group][c] += flag
    return {g: {c: hits[g][c] / totals[g] for c in JUDGE_CATEGORIES} for g in sorted(totals)}


# -- reports ----------------------------------------------------------------------


@dataclass
class MetricReport:
    dc_by_hop: DCSeries
    dc_by_prefix: DCSeries
    coverage: float
    coverage_over_stated: float | None
    base: float
    decay: float
    group_counts: dict[int, int]
    matrix: dict[tuple[int, int], tuple[float, int]]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "dc_by_hop": self.dc_by_hop.to_dict(),
            "dc_by_prefix": self.dc_by_prefix.to_dict(),
            "coverage": _finite(self.coverage),
            "coverage_over_stated": _finite(self.coverage_over_stated),
            "base": _finite(self.base),
            "decay": _finite(self.decay),
            "group_counts": {str(k): v for k, v in self.group_counts.items()},
            "matrix": [
                {"prefix": k, "hop": h, "dc": dc, "n": n} for (k, h), (dc, n) in sorted(self.matrix.items())
            ],
            "metadata": self.metadata,
        }


def _finite(x: float | None) -> float | None:
    return None if x is None or math.isnan(x) else x


def build_report(
    records: Sequence[EvalRecord],
    coverage_items: Sequence[tuple[Collection[str], Collection[str], Collection[str]]] = (),
    accuracies: Mapping[str, float] | None = None,
    *,
    min_ratio: float = 0.2,
    reference_prefix: int | None = 1,
    metadata: Mapping | None = None,
) -> MetricReport:
    """Assemble every metric; coverage items are (reference vars, stated reference vars, all stated vars)."""
    series = dc_by_hop(records, min_ratio, reference_prefix)
    if len(series.points) >= 2:
        base, decay = base_and_decay(series)
    else:
        base, decay = (series.points[0].mean if series.points else float("nan")), float("nan")
    cov = coverage([(ref, got) for ref, got, _ in coverage_items]) if coverage_items else float("nan")
    cov_stated = (
        coverage([(ref, stated) for ref, _, stated in coverage_items], "stated") if coverage_items else None
    )
    meta = {
        "records": len(records),
        "hop_filter": {"min_ratio": min_ratio, "reference_prefix": reference_prefix},
        "hop_normalization": "x = hop / max hop",
        "prefix_weighting": "equal weight per populated prefix",
        "std_err": "sample standard error across per-prefix means",
        "coverage_denominator": "reference variables (coverage_over_stated uses stated variables)",
    }
    meta.update(metadata or {})
    return MetricReport(
        dc_by_hop=series,
        dc_by_prefix=dc_by_prefix(records),
        coverage=cov,
        coverage_over_stated=cov_stated,
        base=base,
        decay=decay,
        group_counts=group_counts(accuracies or {}),
        matrix=dc_matrix(records),
        metadata=meta,
    )


def format_cell(mean: float, se: float) -> str:
    """Table cell such as "0.89 ± 0.0135" (4 decimals, trailing zeros dropped)."""
    return f"{format(round(mean, 4), 'g')} ± {format(round(se, 4), 'g')}"


def write_report(report: MetricReport, outdir: str | Path, label: str = "model") -> list[Path]:
    """metrics.json plus hop, prefix and (prefix, hop) matrix CSV tables."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    p = out / "metrics.json"
    p.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(p)

    for name, series, head in (("dc_by_hop.csv", report.dc_by_hop, "Hop"), ("dc_by_prefix.csv", report.dc_by_prefix, "Prefix")):
        p = out / name
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["Models"] + [f"{head}-{pt.x}" for pt in series.points])
            w.writerow([label] + [format_cell(pt.mean, pt.std_err) for pt in series.points])
        paths.append(p)

    p = out / "dc_matrix.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prefix", "hop", "dc", "n"])
        for (k, h), (dc, n) in sorted(report.matrix.items()):
            w.writerow([k, h, repr(dc), n])
    paths.append(p)
    return paths

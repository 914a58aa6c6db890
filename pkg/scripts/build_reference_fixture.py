"""Build per-record scored data consistent with a published hop table row.

For every hop the row gives a mean and a standard error across prefixes. Two
prefix lengths with means ``mean + se`` and ``mean - se`` reproduce both
exactly under equal prefix weighting (the sample SE of two values a, b is
|a - b| / 2). Each (prefix, hop) cell holds ``--per-cell`` records, and the
first records that are wrong get no extracted value until the requested
coverage is reached.
"""

from __future__ import annotations

import argparse
import json
from fractions import Fraction
from pathlib import Path

from dedcons.jsonl import write_jsonl
from dedcons.metrics import EvalRecord
from dedcons.scoring import ScoredInstance

ROOT = Path(__file__).resolve().parents[1]
TABLES = ROOT / "tests" / "fixtures" / "reference_tables.json"
DEFAULT_OUT = ROOT / "tests" / "fixtures" / "gsm8k_llama70b_scored.jsonl.gz"


def build(means, ses, coverage: float, per_cell: int = 10000) -> list[ScoredInstance]:
    hops = range(1, len(means) + 1)
    correct_counts = {}
    for k, sign in ((1, 1), (2, -1)):
        for hop, m, se in zip(hops, means, ses):
            share = Fraction(str(m)) + sign * Fraction(str(se))
            count = share * per_cell
            if count.denominator != 1 or not 0 <= count <= per_cell:
                raise ValueError(f"hop {hop}: {float(share)} x {per_cell} is not a whole count")
            correct_counts[(k, hop)] = int(count)

    total = 2 * per_cell * len(means)
    missing_left = round((1 - Fraction(str(coverage))) * total)
    out = []
    for k in (1, 2):
        for i in range(per_cell):
            records = []
            stated = []
            for hop in hops:
                name = f"v{hop}"
                reference = Fraction(100 + hop)
                correct = i < correct_counts[(k, hop)]
                predicted = reference if correct else reference + 7
                if not correct and missing_left > 0:
                    predicted = None
                    missing_left -= 1
                else:
                    stated.append(name)
                records.append(
                    EvalRecord(
                        problem_id=f"p{i:05d}",
                        prefix_k=k,
                        variable=name,
                        hop=hop,
                        predicted=predicted,
                        reference=reference,
                        correct=correct,
                        is_target=hop == len(means),
                        instance_id=f"p{i:05d}:k{k}",
                    )
                )
            out.append(
                ScoredInstance(
                    instance_id=f"p{i:05d}:k{k}",
                    problem_id=f"p{i:05d}",
                    run_id="reference",
                    source="benchmark",
                    style="original",
                    prefix_k=k,
                    mutation_id=0,
                    status="scored",
                    backend="fixture",
                    final_predicted=records[-1].predicted,
                    final_reference=records[-1].reference,
                    final_correct=records[-1].correct,
                    reference_vars=[r.variable for r in records],
                    stated_reference=stated,
                    stated_all=stated,
                    records=records,
                )
            )
    if missing_left:
        raise ValueError("not enough wrong records to reach the requested coverage")
    return out


def main(argv: list[str] | None = None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="Llama-3.3-70B")
    ap.add_argument("--style", default="original")
    ap.add_argument("--per-cell", type=int, default=10000)
    ap.add_argument("--output", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args(argv)
    tables = json.loads(TABLES.read_text())
    row = next(
        s for s in tables["hop_series"]
        if s["group"] == "styles" and s["model"] == args.model and s["style"] == args.style
    )
    cov = tables["coverage"][args.model][args.style]
    scored = build(row["mean"], row["se"], cov, args.per_cell)
    n = write_jsonl(args.output, (s.to_dict() for s in scored))
    print(f"wrote {n} scored instances to {args.output}")


if __name__ == "__main__":
    main()

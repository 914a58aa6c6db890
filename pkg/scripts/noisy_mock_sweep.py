"""Run the independent-error mock at several error rates and compare the
per-hop deductive consistency with the binomial law (1 - p)^hop.

Example:
    python3 scripts/noisy_mock_sweep.py --p 0.1 0.3 --items 1200
"""

from __future__ import annotations

import argparse
import tempfile
import time
from collections import Counter
from pathlib import Path

from dedcons.metrics import base_and_decay, dc_by_hop
from dedcons.runner import MockReasonerConfig, ResponseStore, run_dataset
from dedcons.scoring import flatten_records, score_responses
from dedcons.syndeduct import GenParams, TransformParams, generate_questions, transform_questions


def build_dataset(items: int, prefixes: int, seed: int, num_graphs: int = 400):
    questions, _ = generate_questions(
        GenParams(num_graphs=num_graphs, m=40, max_hops=prefixes + 6, max_graphs_per_hop=400, seed=seed)
    )
    t = TransformParams(max_hops=6, max_items_per_hop=items, max_prefixes=prefixes, seed=seed)
    dataset, warnings = transform_questions(questions, t)
    return dataset, warnings


def sweep(dataset, p: float, seed: int, workdir: Path):
    store = ResponseStore(workdir / f"responses-{p}.jsonl")
    run_id = f"independent-{p}"
    run_dataset(dataset, store, run_id, mock=MockReasonerConfig(p=p, error_mode="independent", seed=seed))
    scored = score_responses(dataset, store.records(), run_id=run_id, backend="pattern")
    records = flatten_records(scored)
    series = dc_by_hop(records)
    per_hop = Counter(r.hop for r in records)
    rows = []
    for pt in series.points:
        expected = (1 - p) ** pt.x
        z = (pt.mean - expected) / pt.std_err if pt.std_err else float("inf")
        rows.append((pt.x, per_hop[pt.x], pt.mean, expected, pt.std_err, z))
    return rows, base_and_decay(series), series.omitted


def main(argv: list[str] | None = None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--p", type=float, nargs="+", default=[0.1, 0.3])
    ap.add_argument("--items", type=int, default=1200, help="instances per hop")
    ap.add_argument("--prefixes", type=int, default=12)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    start = time.perf_counter()
    dataset, warnings = build_dataset(args.items, args.prefixes, args.seed)
    print(f"{len(dataset)} instances, {len(warnings)} short cells, built in {time.perf_counter() - start:.1f}s")
    with tempfile.TemporaryDirectory() as tmp:
        for p in args.p:
            rows, (base, decay), omitted = sweep(dataset, p, args.seed, Path(tmp))
            print(f"\np = {p}: base {base:.4f}, decay {decay:.4f}, omitted hops {omitted}")
            print("hop  records  dc      (1-p)^hop  se      z")
            for hop, n, mean, expected, se, z in rows:
                print(f"{hop:<4} {n:<8} {mean:.4f}  {expected:.4f}     {se:.4f}  {z:+.2f}")
    print(f"\ntotal {time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()

"""Run the full synthetic pipeline at desk scale with the mock reasoner.

generate -> transform -> run (mock) -> score -> report, all through the CLI,
into one output directory. With ``--p 0`` every cell of the report has DC 1.

Example:
    python3 scripts/desk_pipeline.py --out desk-run --p 0.2 --error_mode propagate
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from dedcons.cli import main as dedcons


def run_pipeline(out: Path, p: float, error_mode: str, seed: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    questions, dataset, store, scored = (out / n for n in ("questions.jsonl", "dataset.jsonl", "responses.jsonl", "scored.jsonl"))
    steps = [
        ["generate", "--num_graphs", 60, "--m", 20, "--max_hops", 8, "--seed", seed, "--output_file", questions],
        ["transform", questions, "--max_hops", 4, "--max_items", 12, "--max_prefixes", 4, "--seed", seed,
         "--output_file", dataset],
        ["run", "--dataset", dataset, "--store", store, "--mock", "--p", p, "--error_mode", error_mode,
         "--seed", seed],
        ["score", "--dataset", dataset, "--store", store, "--output_file", scored, "--backend", "pattern"],
        ["report", "--scored", scored, "--output_dir", out / "report", "--label", f"mock p={p}"],
    ]
    for argv in steps:
        code = dedcons([str(a) for a in argv])
        if code != 0:
            raise SystemExit(f"{argv[0]} exited with {code}")


def main(argv: list[str] | None = None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("desk-run"))
    ap.add_argument("--p", type=float, default=0.0)
    ap.add_argument("--error_mode", choices=["perturb-value", "propagate", "independent"], default="perturb-value")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    start = time.perf_counter()
    run_pipeline(args.out, args.p, args.error_mode, args.seed)
    print(f"done in {time.perf_counter() - start:.1f}s; tables under {args.out / 'report'}")


if __name__ == "__main__":
    main()

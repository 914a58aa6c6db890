"""Recompute base and decay for every published hop series and compare.

Reads ``tests/fixtures/reference_tables.json`` and prints one row per series
with the recomputed values next to the stored ones. Exits 1 on any mismatch
beyond 5e-5 in decay or any difference in base.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from dedcons.metrics import base_and_decay

DEFAULT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "reference_tables.json"


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("tables", type=Path, nargs="?", default=DEFAULT)
    args = ap.parse_args(argv)
    rows = json.loads(args.tables.read_text(encoding="utf-8"))["hop_series"]
    mismatches = 0
    print(f"{'group':<10} {'model':<22} {'style':<12} {'base':>6} {'decay':>9} {'stored':>9}  ok")
    for row in rows:
        base, decay = base_and_decay(list(enumerate(row["mean"], start=1)))
        ok = abs(decay - row["decay"]) <= 5e-5 and base == row["base"]
        mismatches += not ok
        print(f"{row['group']:<10} {row['model']:<22} {row['style']:<12} {base:>6.4f} {decay:>9.5f} {row['decay']:>9.5f}  {'yes' if ok else 'NO'}")
    print(f"{len(rows) - mismatches}/{len(rows)} series reproduced")
    return 1 if mismatches else 0


if __name__ == "__main__":
    sys.exit(main())

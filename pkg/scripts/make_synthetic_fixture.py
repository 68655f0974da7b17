"""Regenerate the bundled 3-SKU transaction fixture.

    python3 scripts/make_synthetic_fixture.py [--seed 0] [--out PATH]
"""

import argparse
from pathlib import Path

from retail_marl.ingest import write_transactions
from retail_marl.synthetic import synthetic_transactions

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "retail_marl" / "data" / "synthetic_transactions.csv"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()
    rows = synthetic_transactions(args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_transactions(rows, args.out)
    print(f"wrote {len(rows)} lines to {args.out}")


if __name__ == "__main__":
    main()

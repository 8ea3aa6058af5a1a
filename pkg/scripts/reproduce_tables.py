#!/usr/bin/env python3
"""Regenerate the response, log and tracing tables from the golden runs.

    python3 scripts/reproduce_tables.py [--seed N] [--out DIR]
"""

import argparse
from pathlib import Path

from faultobs.classify import PROFILES, TRACE_COLUMNS, render_tables
from faultobs.scenarios import golden_matrix


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="also write tables.md and tables.json here")
    args = ap.parse_args()

    _, matrix = golden_matrix(PROFILES, TRACE_COLUMNS, args.seed)
    report = render_tables(matrix, PROFILES, TRACE_COLUMNS)
    print(report.markdown)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "tables.md").write_text(report.markdown)
        (out / "tables.json").write_text(report.json())


if __name__ == "__main__":
    main()
